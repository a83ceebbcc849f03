#pragma once
// Procedural indoor rooms: an axis-aligned box room seen from the origin
// along +z (y down), optional boxes resting on the floor, and flat window and
// door rectangles on the walls. Depth is exact ray casting under the pinhole
// model used by back_project (pixel u sees direction ((u-cx)/fx, (v-cy)/fy, 1)).

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "pfseg/geometry.hpp"
#include "pfseg/io.hpp"
#include "pfseg/losses.hpp"
#include "pfseg/random.hpp"

namespace pfseg {

enum class SceneClass : std::uint8_t { floor = 0, wall = 1, ceiling = 2, box = 3, window = 4, door = 5 };
inline constexpr std::size_t kSceneClasses = 6;
inline constexpr std::size_t kMaxLayoutAttempts = 100;

inline const char* class_name(std::size_t c) {
  static constexpr std::array<const char*, kSceneClasses> names = {"floor", "wall", "ceiling", "box", "window", "door"};
  return c < kSceneClasses ? names[c] : "?";
}

struct SceneParams {
  std::size_t width = 64, height = 64;
  std::array<bool, kSceneClasses> palette = {true, true, true, true, true, true};
  double rgb_noise = 0.02;   // per-channel Gaussian sigma, [0,1] intensity units
  double depth_noise = 0.0;  // Gaussian sigma in meters
  std::size_t min_boxes = 0, max_boxes = 2;
  double window_probability = 0.6;
  double door_probability = 0.5;
  double min_visible_pixels = 24;  // per placed object, scaled by image area / 64^2

  void validate() const {
    if (width < 4 || height < 4) throw ConfigError("scene: image must be at least 4x4");
    if (std::count(palette.begin(), palette.end(), true) < 4) throw ConfigError("scene: palette needs at least 4 classes");
    for (auto c : {SceneClass::floor, SceneClass::wall, SceneClass::ceiling}) {
      if (!palette[static_cast<std::size_t>(c)]) {
        throw ConfigError(std::string("scene: palette must contain structural class ") +
                          class_name(static_cast<std::size_t>(c)));
      }
    }
    if (!(rgb_noise >= 0.0) || !(depth_noise >= 0.0)) throw ConfigError("scene: noise levels must be >= 0");
    if (min_boxes > max_boxes) throw ConfigError("scene: min_boxes exceeds max_boxes");
    if (!(window_probability >= 0.0 && window_probability <= 1.0) ||
        !(door_probability >= 0.0 && door_probability <= 1.0)) {
      throw ConfigError("scene: probabilities must lie in [0, 1]");
    }
  }
};

/// Axis-aligned box [lo, hi] in camera coordinates.
struct Box3 {
  Vec3 lo, hi;
};

/// Rectangle on one wall plane; `wall` indexes RoomLayout::kLeft.. kBack and
/// (a, b) are the in-plane coordinates (z or x, then y).
struct WallRect {
  int wall = 0;
  double a0 = 0, a1 = 0, y0 = 0, y1 = 0;
};

struct RoomLayout {
  static constexpr int kFloor = 0, kCeiling = 1, kLeft = 2, kRight = 3, kBack = 4;
  double floor_y = 1.4, ceiling_y = -1.4, left_x = -1.5, right_x = 1.5, back_z = 3.0;
  std::vector<Box3> boxes;
  std::optional<WallRect> window, door;
};

struct SyntheticScene {
  std::uint64_t seed = 0;
  Image rgb;
  DepthMap depth;
  CameraIntrinsics intrinsics;
  LabelMap labels;
  RoomLayout layout;
  std::vector<int> plane_id;     // surface index per pixel; boxes use 5 + 6*box + face
  std::vector<Vec3> normals;     // analytic unit normal per pixel, oriented as encode_normals does
};

namespace detail {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int plane = -1;
  Vec3 normal{0, 0, 0};
};

inline Vec3 pixel_ray(const CameraIntrinsics& k, std::size_t u, std::size_t v) {
  return {(static_cast<double>(u) - k.cx) / k.fx, (static_cast<double>(v) - k.cy) / k.fy, 1.0};
}

inline Hit cast_room(const RoomLayout& room, const Vec3& d) {
  Hit h;
  auto consider = [&](double t, int plane, Vec3 n) {
    if (t > 0.0 && t < h.t) h = {t, plane, n};
  };
  if (d[1] > 0) consider(room.floor_y / d[1], RoomLayout::kFloor, {0, -1, 0});
  if (d[1] < 0) consider(room.ceiling_y / d[1], RoomLayout::kCeiling, {0, 1, 0});
  if (d[0] < 0) consider(room.left_x / d[0], RoomLayout::kLeft, {1, 0, 0});
  if (d[0] > 0) consider(room.right_x / d[0], RoomLayout::kRight, {-1, 0, 0});
  consider(room.back_z / d[2], RoomLayout::kBack, {0, 0, -1});
  for (std::size_t b = 0; b < room.boxes.size(); ++b) {
    const Box3& box = room.boxes[b];
    double t_in = 0.0, t_out = std::numeric_limits<double>::infinity();
    int axis_in = -1;
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (d[a] == 0.0) {
        if (0.0 < box.lo[a] || 0.0 > box.hi[a]) miss = true;
        continue;
      }
      double t0 = box.lo[a] / d[a], t1 = box.hi[a] / d[a];
      if (t0 > t1) std::swap(t0, t1);
      if (t0 > t_in) {
        t_in = t0;
        axis_in = a;
      }
      t_out = std::min(t_out, t1);
      if (t_in > t_out) miss = true;
    }
    if (miss || axis_in < 0) continue;
    Vec3 n{0, 0, 0};
    n[axis_in] = d[axis_in] > 0 ? -1.0 : 1.0;
    const int face = axis_in * 2 + (d[axis_in] > 0 ? 0 : 1);
    consider(t_in, 5 + 6 * static_cast<int>(b) + face, n);
  }
  return h;
}

/// In-plane coordinate of a wall hit used by WallRect.
inline double wall_coordinate(int wall, const Vec3& p) { return wall == RoomLayout::kBack ? p[0] : p[2]; }

inline bool inside(const std::optional<WallRect>& r, int plane, const Vec3& p) {
  if (!r || r->wall != plane) return false;
  const double a = wall_coordinate(plane, p);
  return a >= r->a0 && a <= r->a1 && p[1] >= r->y0 && p[1] <= r->y1;
}

struct Albedo {
  std::array<double, 3> base;
  double period;
  int pattern;  // 0 flat, 1 stripes along x, 2 stripes along y, 3 diagonal, 4 vertical gradient
};

inline double texture(const Albedo& a, const Vec3& p) {
  const double two_pi = 2.0 * std::numbers::pi;
  switch (a.pattern) {
    case 1: return std::sin(two_pi * (p[0] + p[2]) / a.period);
    case 2: return std::sin(two_pi * p[1] / a.period);
    case 3: return std::sin(two_pi * (p[0] + p[1] + p[2]) / a.period);
    case 4: return std::clamp(p[1] / a.period, -1.0, 1.0);
    default: return 0.0;
  }
}

inline bool boxes_overlap(const Box3& a, const Box3& b, double margin) {
  return a.lo[0] < b.hi[0] + margin && b.lo[0] < a.hi[0] + margin && a.lo[2] < b.hi[2] + margin &&
         b.lo[2] < a.hi[2] + margin;
}

inline WallRect sample_wall_rect(Rng& rng, const RoomLayout& room, bool door) {
  const int wall = rng.uniform() < 0.6 ? RoomLayout::kBack : (rng.uniform() < 0.5 ? RoomLayout::kLeft : RoomLayout::kRight);
  const double lo = wall == RoomLayout::kBack ? room.left_x + 0.1 : 1.2;
  const double hi = wall == RoomLayout::kBack ? room.right_x - 0.1 : room.back_z - 0.1;
  const double width = door ? rng.uniform(0.8, 1.0) : rng.uniform(0.7, 1.2);
  const double a0 = rng.uniform(lo, std::max(lo, hi - width));
  WallRect r{wall, a0, std::min(hi, a0 + width), 0.0, 0.0};
  if (door) {
    r.y1 = room.floor_y;
    r.y0 = std::max(room.ceiling_y + 0.3, room.floor_y - rng.uniform(1.9, 2.1));
  } else {
    r.y1 = room.floor_y - rng.uniform(0.8, 1.1);
    r.y0 = std::max(room.ceiling_y + 0.2, r.y1 - rng.uniform(0.6, 1.0));
  }
  return r;
}

inline bool rects_overlap(const WallRect& a, const WallRect& b) {
  return a.wall == b.wall && a.a0 < b.a1 + 0.1 && b.a0 < a.a1 + 0.1;
}

inline RoomLayout sample_layout(Rng& rng, const SceneParams& params) {
  RoomLayout room;
  room.floor_y = rng.uniform(1.3, 1.6);
  room.ceiling_y = -rng.uniform(1.3, 1.6);
  room.left_x = -rng.uniform(1.4, 1.8);
  room.right_x = rng.uniform(1.4, 1.8);
  room.back_z = rng.uniform(2.8, 3.2);
  const bool boxes_on = params.palette[static_cast<std::size_t>(SceneClass::box)];
  const std::size_t n_boxes =
      boxes_on ? static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(params.min_boxes),
                                                          static_cast<std::int64_t>(params.max_boxes)))
               : 0;
  for (std::size_t b = 0; b < n_boxes; ++b) {
    const double w = rng.uniform(0.4, 0.9), h = rng.uniform(0.4, 1.0), dz = rng.uniform(0.4, 0.8);
    const double x0 = rng.uniform(room.left_x + 0.1, room.right_x - 0.1 - w);
    const double z0 = rng.uniform(1.6, room.back_z - 0.1 - dz);
    room.boxes.push_back({{x0, room.floor_y - h, z0}, {x0 + w, room.floor_y, z0 + dz}});
  }
  if (params.palette[static_cast<std::size_t>(SceneClass::window)] && rng.uniform() < params.window_probability) {
    room.window = sample_wall_rect(rng, room, false);
  }
  if (params.palette[static_cast<std::size_t>(SceneClass::door)] && rng.uniform() < params.door_probability) {
    room.door = sample_wall_rect(rng, room, true);
  }
  return room;
}

inline bool layout_feasible(const RoomLayout& room) {
  for (std::size_t i = 0; i < room.boxes.size(); ++i) {
    const Box3& b = room.boxes[i];
    if (b.lo[0] < room.left_x || b.hi[0] > room.right_x || b.hi[2] > room.back_z || b.lo[2] <= 0.5) return false;
    for (std::size_t j = 0; j < i; ++j)
      if (boxes_overlap(b, room.boxes[j], 0.1)) return false;
  }
  if (room.window && room.door && rects_overlap(*room.window, *room.door)) return false;
  return true;
}

}  // namespace detail

/// Renders one room. Throws DomainError when no feasible layout with every
/// sampled object visible is found within kMaxLayoutAttempts draws.
inline SyntheticScene generate_scene(std::uint64_t seed, const SceneParams& params = {}) {
  params.validate();
  Rng rng(seed);
  const std::size_t W = params.width, H = params.height, M = W * H;
  const double f = rng.uniform(50.0, 58.0) * static_cast<double>(W) / 64.0;
  const CameraIntrinsics k{f, f, (static_cast<double>(W) - 1.0) / 2.0, (static_cast<double>(H) - 1.0) / 2.0};
  const double min_visible = params.min_visible_pixels * static_cast<double>(M) / 4096.0;

  for (std::size_t attempt = 0; attempt < kMaxLayoutAttempts; ++attempt) {
    const RoomLayout room = detail::sample_layout(rng, params);
    if (!detail::layout_feasible(room)) continue;

    SyntheticScene s;
    s.seed = seed;
    s.intrinsics = k;
    s.layout = room;
    s.plane_id.assign(M, -1);
    s.normals.assign(M, Vec3{0, 0, 0});
    s.labels = LabelMap{W, H, std::vector<std::uint8_t>(M, kIgnoreLabel)};
    std::vector<double> t(M, 0.0);
    std::vector<Vec3> points(M);
    std::vector<std::size_t> box_pixels(room.boxes.size(), 0);
    std::size_t window_pixels = 0, door_pixels = 0;
    for (std::size_t v = 0; v < H; ++v) {
      for (std::size_t u = 0; u < W; ++u) {
        const std::size_t i = v * W + u;
        const Vec3 d = detail::pixel_ray(k, u, v);
        const detail::Hit hit = detail::cast_room(room, d);
        const Vec3 p{d[0] * hit.t, d[1] * hit.t, hit.t};
        t[i] = hit.t;
        points[i] = p;
        s.plane_id[i] = hit.plane;
        s.normals[i] = orient_toward_camera(hit.normal);
        SceneClass c = SceneClass::wall;
        if (hit.plane == RoomLayout::kFloor) c = SceneClass::floor;
        else if (hit.plane == RoomLayout::kCeiling) c = SceneClass::ceiling;
        else if (hit.plane >= 5) c = SceneClass::box;
        if (c == SceneClass::wall && detail::inside(room.door, hit.plane, p)) c = SceneClass::door;
        else if (c == SceneClass::wall && detail::inside(room.window, hit.plane, p)) c = SceneClass::window;
        if (c == SceneClass::box) ++box_pixels[static_cast<std::size_t>(hit.plane - 5) / 6];
        if (c == SceneClass::window) ++window_pixels;
        if (c == SceneClass::door) ++door_pixels;
        s.labels.labels[i] = static_cast<std::uint8_t>(c);
      }
    }
    bool visible = true;
    for (auto n : box_pixels) visible = visible && static_cast<double>(n) >= min_visible;
    if (room.window) visible = visible && static_cast<double>(window_pixels) >= min_visible;
    if (room.door) visible = visible && static_cast<double>(door_pixels) >= min_visible;
    if (!visible) continue;

    std::array<detail::Albedo, kSceneClasses> albedo = {{
        {{0.55, 0.38, 0.22}, 0.35, 1},
        {{0.80, 0.77, 0.68}, 0.60, 3},
        {{0.93, 0.93, 0.95}, 1.00, 0},
        {{0.25, 0.42, 0.72}, 0.20, 2},
        {{0.55, 0.80, 0.97}, 1.50, 4},
        {{0.42, 0.22, 0.12}, 0.10, 1},
    }};
    for (auto& a : albedo)
      for (auto& ch : a.base) ch = std::clamp(ch + rng.uniform(-0.05, 0.05), 0.0, 1.0);

    std::vector<double> z(M);
    for (std::size_t i = 0; i < M; ++i) z[i] = t[i] + (params.depth_noise > 0 ? params.depth_noise * rng.normal() : 0.0);
    s.depth = DepthMap::from_meters(W, H, z);

    s.rgb = Image(W, H, 3, 255);
    for (std::size_t i = 0; i < M; ++i) {
      const auto& a = albedo[s.labels.labels[i]];
      const double shade = 0.88 + 0.12 * detail::texture(a, points[i]);
      for (std::size_t c = 0; c < 3; ++c) {
        double value = a.base[c] * shade;
        if (params.rgb_noise > 0) value += params.rgb_noise * rng.normal();
        s.rgb.pixels[i * 3 + c] = static_cast<std::uint16_t>(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
      }
    }
    return s;
  }
  throw DomainError("scene " + std::to_string(seed) + ": unsatisfiable layout after " +
                    std::to_string(kMaxLayoutAttempts) + " rejection samples");
}

// ---- dataset directories ----

/// Scene as stored on disk; depth is millimeter-quantized.
struct SceneRecord {
  std::string name;
  Image rgb;
  DepthMap depth;
  CameraIntrinsics intrinsics;
  LabelMap labels;
};

inline SceneRecord to_record(const SyntheticScene& s) {
  return {"scene_" + std::to_string(s.seed), s.rgb, DepthMap::from_millimeters(s.depth.to_millimeters()),
          s.intrinsics, s.labels};
}

inline Image labels_to_image(const LabelMap& l) {
  Image img(l.width, l.height, 1, 255);
  std::copy(l.labels.begin(), l.labels.end(), img.pixels.begin());
  return img;
}

inline LabelMap labels_from_image(const Image& img) {
  if (img.channels != 1 || img.maxval > 255) throw FormatError("labels must be an 8-bit single-channel PGM");
  LabelMap l{img.width, img.height, std::vector<std::uint8_t>(img.pixels.size())};
  std::transform(img.pixels.begin(), img.pixels.end(), l.labels.begin(),
                 [](std::uint16_t v) { return static_cast<std::uint8_t>(v); });
  return l;
}

inline void write_scene(const std::filesystem::path& dir, const SceneRecord& r) {
  std::filesystem::create_directories(dir);
  write_netpbm((dir / "rgb.ppm").string(), r.rgb);
  write_netpbm((dir / "depth.pgm").string(), r.depth.to_millimeters());
  write_netpbm((dir / "labels.pgm").string(), labels_to_image(r.labels));
  write_text_file((dir / "intrinsics.txt").string(), r.intrinsics.str());
}

/// Reads rgb.ppm, depth.pgm and intrinsics.txt; labels.pgm is optional
/// (absent labels are all ignore).
inline SceneRecord read_scene(const std::filesystem::path& dir) {
  SceneRecord r;
  r.name = dir.filename().string();
  r.rgb = read_netpbm((dir / "rgb.ppm").string());
  if (r.rgb.channels != 3) throw FormatError((dir / "rgb.ppm").string() + ": expected a P6 colour image");
  r.depth = DepthMap::from_millimeters(read_netpbm((dir / "depth.pgm").string()));
  r.intrinsics = CameraIntrinsics::from_key_values(KeyValueFile::load((dir / "intrinsics.txt").string()));
  if (std::filesystem::exists(dir / "labels.pgm")) {
    r.labels = labels_from_image(read_netpbm((dir / "labels.pgm").string()));
  } else {
    r.labels = LabelMap{r.rgb.width, r.rgb.height, std::vector<std::uint8_t>(r.rgb.width * r.rgb.height, kIgnoreLabel)};
  }
  if (r.depth.width() != r.rgb.width || r.depth.height() != r.rgb.height || r.labels.width != r.rgb.width ||
      r.labels.height != r.rgb.height) {
    throw FormatError(dir.string() + ": rgb, depth and labels extents differ");
  }
  r.intrinsics.validate(r.rgb.width, r.rgb.height);
  return r;
}

/// Scene directories under `root` (names starting with "scene_"), sorted by
/// their numeric seed suffix.
inline std::vector<std::filesystem::path> list_scenes(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw FormatError("dataset directory not found: " + root.string());
  std::vector<std::pair<std::uint64_t, std::filesystem::path>> found;
  for (const auto& e : std::filesystem::directory_iterator(root)) {
    const std::string name = e.path().filename().string();
    if (!e.is_directory() || name.rfind("scene_", 0) != 0) continue;
    try {
      found.emplace_back(std::stoull(name.substr(6)), e.path());
    } catch (const std::exception&) {
      continue;
    }
  }
  std::sort(found.begin(), found.end());
  std::vector<std::filesystem::path> out;
  for (auto& f : found) out.push_back(f.second);
  return out;
}

}  // namespace pfseg
