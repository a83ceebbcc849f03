#pragma once

// Depth-to-normal encoding: pinhole back-projection, windowed k-nearest
// neighbours with a relative depth-gap filter, and least-squares plane fits
// n ~ (A^T A)^-1 A^T 1 over each neighbourhood.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfseg/io.hpp"
#include "pfseg/parallel.hpp"
#include "pfseg/tensor.hpp"

namespace pfseg {

using Vec3 = std::array<double, 3>;

inline double norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

/// Angle between two unit vectors, robust near 0.
inline double angle_between(const Vec3& a, const Vec3& b) {
  const Vec3 d{a[0] - b[0], a[1] - b[1], a[2] - b[2]};
  const Vec3 s{a[0] + b[0], a[1] + b[1], a[2] + b[2]};
  return 2.0 * std::atan2(norm(d), norm(s));
}

struct CameraIntrinsics {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;

  void validate(std::size_t width, std::size_t height) const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("intrinsics: focal lengths must be positive");
    if (!(cx >= 0.0 && cx < static_cast<double>(width) && cy >= 0.0 && cy < static_cast<double>(height))) {
      throw ConfigError("intrinsics: principal point outside the image");
    }
  }

  static CameraIntrinsics from_key_values(const KeyValueFile& kv) {
    CameraIntrinsics k;
    k.fx = kv.get_double("fx");
    k.fy = kv.get_double("fy");
    k.cx = kv.get_double("cx");
    k.cy = kv.get_double("cy");
    return k;
  }

  std::string str() const {
    std::ostringstream os;
    os.precision(17);
    os << "fx " << fx << "\nfy " << fy << "\ncx " << cx << "\ncy " << cy << "\n";
    return os.str();
  }
};

inline constexpr double kMaxDepthMeters = 100.0;

/// Per-pixel depth in meters with a validity mask.
class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(std::size_t width, std::size_t height) : width_(width), height_(height), z_(width * height, 0.0), valid_(width * height, 0) {}

  /// Non-positive or non-finite entries become invalid pixels.
  static DepthMap from_meters(std::size_t width, std::size_t height, const std::vector<double>& z) {
    if (z.size() != width * height) throw DimensionError("depth map size mismatch");
    DepthMap d(width, height);
    for (std::size_t i = 0; i < z.size(); ++i) d.set(i, z[i]);
    return d;
  }

  /// 16-bit millimeter raster, 0 = missing.
  static DepthMap from_millimeters(const Image& img) {
    if (img.channels != 1) throw FormatError("depth image must be single-channel");
    DepthMap d(img.width, img.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      if (img.pixels[i] != 0) d.set(i, img.pixels[i] / 1000.0);
    }
    return d;
  }

  Image to_millimeters() const {
    Image img(width_, height_, 1, 65535);
    for (std::size_t i = 0; i < z_.size(); ++i) {
      if (!valid_[i]) continue;
      const double mm = std::round(z_[i] * 1000.0);
      img.pixels[i] = static_cast<std::uint16_t>(std::clamp(mm, 1.0, 65535.0));
    }
    return img;
  }

  void set(std::size_t i, double z) {
    if (std::isfinite(z) && z > 0.0) {
      if (z >= kMaxDepthMeters) throw DomainError("depth " + std::to_string(z) + " m exceeds the 100 m limit");
      z_[i] = z;
      valid_[i] = 1;
    } else {
      z_[i] = 0.0;
      valid_[i] = 0;
    }
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t size() const { return z_.size(); }
  double z(std::size_t i) const { return z_[i]; }
  double z(std::size_t x, std::size_t y) const { return z_[y * width_ + x]; }
  bool valid(std::size_t i) const { return valid_[i] != 0; }
  const std::vector<double>& values() const { return z_; }

 private:
  std::size_t width_ = 0, height_ = 0;
  std::vector<double> z_;
  std::vector<std::uint8_t> valid_;
};

/// 3D points aligned with the depth grid; invalid pixels carry no coordinate.
struct PointCloud {
  std::size_t width = 0, height = 0;
  std::vector<Vec3> points;
  std::vector<std::uint8_t> valid;
};

struct NormalMap {
  std::size_t width = 0, height = 0;
  std::vector<Vec3> normals;  // zero vector where invalid
  std::vector<std::uint8_t> valid;

  std::size_t valid_count() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1)); }

  /// 3 x H x W tensor (n_x, n_y, n_z planes).
  Tensor to_tensor() const {
    Tensor t({3, height, width});
    auto d = t.mutable_data();
    const std::size_t hw = width * height;
    for (std::size_t i = 0; i < hw; ++i)
      for (std::size_t c = 0; c < 3; ++c) d[c * hw + i] = normals[i][c];
    return t;
  }

  /// channel = round((n + 1) / 2 * 255)
  Image to_ppm() const {
    Image img(width, height, 3, 255);
    for (std::size_t i = 0; i < normals.size(); ++i)
      for (std::size_t c = 0; c < 3; ++c) {
        img.pixels[i * 3 + c] = static_cast<std::uint16_t>(std::lround((normals[i][c] + 1.0) / 2.0 * 255.0));
      }
    return img;
  }

  std::vector<double> to_sidecar() const {
    std::vector<double> out;
    out.reserve(normals.size() * 3);
    for (const auto& n : normals) out.insert(out.end(), n.begin(), n.end());
    return out;
  }

  /// Sidecar triples; zero triples mark invalid pixels.
  static NormalMap from_sidecar(std::size_t width, std::size_t height, const std::vector<double>& values) {
    if (values.size() != width * height * 3) throw FormatError("normal sidecar size does not match the image");
    NormalMap m{width, height, std::vector<Vec3>(width * height), std::vector<std::uint8_t>(width * height, 0)};
    for (std::size_t i = 0; i < width * height; ++i) {
      m.normals[i] = {values[3 * i], values[3 * i + 1], values[3 * i + 2]};
      m.valid[i] = norm(m.normals[i]) > 0.0 ? 1 : 0;
    }
    return m;
  }
};

/// Decodes one PPM sample back to a normal component.
inline double decode_normal_component(std::uint16_t v) { return static_cast<double>(v) / 255.0 * 2.0 - 1.0; }

struct NeighborhoodParams {
  std::size_t k = 9;
  double gamma = 0.05;
  std::size_t window_radius = 0;  // 0 selects ceil(sqrt(k)) + 1

  std::size_t radius() const {
    return window_radius ? window_radius : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(k)))) + 1;
  }

  void validate() const {
    if (k < 3) throw ConfigError("neighborhood: k must be at least 3");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("neighborhood: gamma must lie in (0, 1)");
    if (radius() < static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(k))))) {
      throw ConfigError("neighborhood: window radius smaller than ceil(sqrt(k))");
    }
  }
};

/// x = (u - cx) z / fx, y = (v - cy) z / fy, with u the column and v the row.
inline PointCloud back_project(const DepthMap& depth, const CameraIntrinsics& intr) {
  if (!(intr.fx > 0.0) || !(intr.fy > 0.0)) throw ConfigError("back_project: focal lengths must be positive");
  PointCloud cloud{depth.width(), depth.height(), std::vector<Vec3>(depth.size(), Vec3{0, 0, 0}),
                   std::vector<std::uint8_t>(depth.size(), 0)};
  for (std::size_t v = 0; v < depth.height(); ++v) {
    for (std::size_t u = 0; u < depth.width(); ++u) {
      const std::size_t i = v * depth.width() + u;
      if (!depth.valid(i)) continue;
      const double z = depth.z(i);
      cloud.points[i] = {(static_cast<double>(u) - intr.cx) * z / intr.fx,
                         (static_cast<double>(v) - intr.cy) * z / intr.fy, z};
      cloud.valid[i] = 1;
    }
  }
  return cloud;
}

struct NeighborList {
  std::vector<std::size_t> indices;  // nearest first; includes the centre pixel
  bool valid = false;                // false when fewer than 3 survive
};

/// Up to k pixels from the square window around `pixel`, passing
/// |z_i - z_j| < gamma * z_i, sorted by 3D distance (ties by pixel index).
inline NeighborList gather_neighbors(const PointCloud& cloud, std::size_t pixel, const NeighborhoodParams& params) {
  NeighborList out;
  if (!cloud.valid[pixel]) return out;
  const std::size_t W = cloud.width, H = cloud.height;
  const long r = static_cast<long>(params.radius());
  const long u0 = static_cast<long>(pixel % W), v0 = static_cast<long>(pixel / W);
  const Vec3& s = cloud.points[pixel];
  std::vector<std::pair<double, std::size_t>> candidates;
  for (long v = std::max(0L, v0 - r); v <= std::min(static_cast<long>(H) - 1, v0 + r); ++v) {
    for (long u = std::max(0L, u0 - r); u <= std::min(static_cast<long>(W) - 1, u0 + r); ++u) {
      const std::size_t j = static_cast<std::size_t>(v) * W + static_cast<std::size_t>(u);
      if (!cloud.valid[j]) continue;
      const Vec3& p = cloud.points[j];
      if (!(std::abs(s[2] - p[2]) < params.gamma * s[2])) continue;
      const Vec3 d{p[0] - s[0], p[1] - s[1], p[2] - s[2]};
      candidates.emplace_back(dot(d, d), j);
    }
  }
  const std::size_t keep = std::min(params.k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<long>(keep), candidates.end());
  for (std::size_t i = 0; i < keep; ++i) out.indices.push_back(candidates[i].second);
  out.valid = out.indices.size() >= 3;
  return out;
}

inline constexpr double kMaxFitCondition = 1e12;

/// Components with magnitude at or below this count as zero when choosing
/// the sign; fits of planes containing the optical axis leave ~1e-17 residue.
inline constexpr double kSignTolerance = 1e-9;

/// Flips n so that n_z <= 0; when n_z is zero (within kSignTolerance), so
/// that the first nonzero component is positive.
inline Vec3 orient_toward_camera(Vec3 n) {
  bool flip = false;
  for (std::size_t c : {2u, 0u, 1u}) {
    if (std::abs(n[c]) <= kSignTolerance) continue;
    flip = c == 2 ? n[c] > 0.0 : n[c] < 0.0;
    break;
  }
  if (flip) n = {-n[0], -n[1], -n[2]};
  return n;
}

/// Unit normal of the least-squares plane n.p = 1 through `points`, or
/// nullopt when A^T A is singular or its condition number exceeds 1e12.
inline std::optional<Vec3> fit_normal(std::span<const Vec3> points) {
  if (points.size() < 3) return std::nullopt;
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d atb = Eigen::Vector3d::Zero();
  for (const auto& p : points) {
    const Eigen::Vector3d row(p[0], p[1], p[2]);
    ata += row * row.transpose();
    atb += row;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(ata, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues()(0), hi = eig.eigenvalues()(2);
  if (!(lo > 0.0) || hi / lo > kMaxFitCondition) return std::nullopt;
  const Eigen::Vector3d x = ata.ldlt().solve(atb);
  const double len = x.norm();
  if (!std::isfinite(len) || len == 0.0) return std::nullopt;
  return orient_toward_camera({x(0) / len, x(1) / len, x(2) / len});
}

/// Normal per valid pixel; pixels with too few neighbours or degenerate fits
/// are left invalid (zero vector).
inline NormalMap encode_normals(const DepthMap& depth, const CameraIntrinsics& intr, const NeighborhoodParams& params,
                                std::size_t threads = 1) {
  params.validate();
  intr.validate(depth.width(), depth.height());
  const PointCloud cloud = back_project(depth, intr);
  NormalMap out{depth.width(), depth.height(), std::vector<Vec3>(depth.size(), Vec3{0, 0, 0}),
                std::vector<std::uint8_t>(depth.size(), 0)};
  parallel_for(depth.height(), threads, [&](std::size_t row) {
    std::vector<Vec3> pts;
    for (std::size_t col = 0; col < depth.width(); ++col) {
      const std::size_t i = row * depth.width() + col;
      const NeighborList nb = gather_neighbors(cloud, i, params);
      if (!nb.valid) continue;
      pts.clear();
      for (auto j : nb.indices) pts.push_back(cloud.points[j]);
      if (auto n = fit_normal(pts)) {
        out.normals[i] = *n;
        out.valid[i] = 1;
      }
    }
  });
  return out;
}

/// Dense copy where every invalid pixel takes the normal of its nearest valid
/// pixel (image-plane distance, ties to the lowest index). The mask is kept.
/// With no valid pixel at all, the fronto-parallel normal (0, 0, -1) is used.
inline NormalMap fill_invalid_normals(const NormalMap& in) {
  NormalMap out = in;
  const long W = static_cast<long>(in.width), H = static_cast<long>(in.height);
  if (in.valid_count() == 0) {
    std::fill(out.normals.begin(), out.normals.end(), Vec3{0, 0, -1});
    return out;
  }
  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      const std::size_t i = static_cast<std::size_t>(y * W + x);
      if (in.valid[i]) continue;
      long best_d2 = -1;
      std::size_t best = 0;
      long found_ring = -1;
      for (long r = 1; r < std::max(W, H); ++r) {
        if (found_ring >= 0 && static_cast<double>(r) > std::ceil(static_cast<double>(found_ring) * std::sqrt(2.0))) break;
        for (long yy = std::max(0L, y - r); yy <= std::min(H - 1, y + r); ++yy) {
          for (long xx = std::max(0L, x - r); xx <= std::min(W - 1, x + r); ++xx) {
            if (std::max(std::abs(yy - y), std::abs(xx - x)) != r) continue;
            const std::size_t j = static_cast<std::size_t>(yy * W + xx);
            if (!in.valid[j]) continue;
            const long d2 = (yy - y) * (yy - y) + (xx - x) * (xx - x);
            if (best_d2 < 0 || d2 < best_d2 || (d2 == best_d2 && j < best)) {
              best_d2 = d2;
              best = j;
            }
          }
        }
        if (best_d2 >= 0 && found_ring < 0) found_ring = r;
      }
      out.normals[i] = in.normals[best];
    }
  }
  return out;
}

}  // namespace pfseg
