#pragma once
// Umbrella header for the whole library.

#include "pfseg/checkpoint.hpp"
#include "pfseg/config.hpp"
#include "pfseg/geometry.hpp"
#include "pfseg/gnn.hpp"
#include "pfseg/gradcheck.hpp"
#include "pfseg/graph_build.hpp"
#include "pfseg/io.hpp"
#include "pfseg/losses.hpp"
#include "pfseg/metrics.hpp"
#include "pfseg/model.hpp"
#include "pfseg/ops.hpp"
#include "pfseg/parallel.hpp"
#include "pfseg/random.hpp"
#include "pfseg/reprojection.hpp"
#include "pfseg/scene.hpp"
#include "pfseg/tensor.hpp"
#include "pfseg/train.hpp"
