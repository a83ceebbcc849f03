#pragma once

#include "pfseg/graph_build.hpp"

namespace pfseg {

struct ReprojectionConfig {
  bool residual = true;
  bool tied = false;  // T' = transform2d^T instead of a learned C x D map
};

/// X~ = T' . (V~^T . P) reshaped to C x H x W, plus x_in when `residual`.
inline Tensor reproject(const Tensor& nodes, const ProjectionMatrix& p, const Tensor& x_in, const Tensor& t_prime,
                        bool residual) {
  if (nodes.rank() != 2 || nodes.dim(0) != p.nodes()) {
    throw DimensionError("reproject: nodes " + to_string(nodes.shape()) + " vs projection with " +
                         std::to_string(p.nodes()) + " nodes");
  }
  if (t_prime.rank() != 2 || t_prime.dim(1) != nodes.dim(1)) {
    throw DimensionError("reproject: T' " + to_string(t_prime.shape()) + " does not map node dimension " +
                         std::to_string(nodes.dim(1)));
  }
  if (x_in.rank() != 3 || x_in.dim(0) != t_prime.dim(0) || x_in.dim(1) != p.height || x_in.dim(2) != p.width) {
    throw DimensionError("reproject: input map " + to_string(x_in.shape()) + " inconsistent with T' " +
                         to_string(t_prime.shape()) + " and projection grid");
  }
  const Tensor mapped =
      reshape(matmul(t_prime, matmul(transpose(nodes), p.scores)), {t_prime.dim(0), p.height, p.width});
  return residual ? add(x_in, mapped) : mapped;
}

}  // namespace pfseg
