#pragma once
/**
 * @file render.hpp
 * @brief Pinhole ray caster producing per-pixel instance ids, plus the
 *        visibility metrics computed on those masks.
 */

#include <avs/error.hpp>
#include <avs/geometry.hpp>
#include <avs/scene.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace avs {

struct CameraConfig {
  double fov_deg = 90.0;  ///< horizontal
  int width = 512;
  int height = 512;
  double cam_height = 90.0;     ///< cm above the floor
  double pitch_down_deg = 15.0;  ///< below horizontal

  [[nodiscard]] long pixels() const noexcept { return static_cast<long>(width) * height; }

  void validate() const {
    if (!(fov_deg > 0.0 && fov_deg < 180.0)) throw DomainError("camera: fov must lie in (0, 180)");
    if (width < 16 || height < 16) throw DomainError("camera: image must be at least 16x16");
    if (width > 8192 || height > 8192) throw DomainError("camera: image too large");
    if (!std::isfinite(cam_height) || !std::isfinite(pitch_down_deg)) throw DomainError("camera: non-finite pose");
  }
};

inline void to_json(nlohmann::json& j, const CameraConfig& c) {
  j = {{"fov_deg", c.fov_deg}, {"width", c.width}, {"height", c.height}, {"cam_height", c.cam_height},
       {"pitch_down_deg", c.pitch_down_deg}};
}
inline void from_json(const nlohmann::json& j, CameraConfig& c) {
  c.fov_deg = j.at("fov_deg").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.cam_height = j.at("cam_height").get<double>();
  c.pitch_down_deg = j.at("pitch_down_deg").get<double>();
}

struct InstanceImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> ids;  ///< row-major, 0 = background

  InstanceImage() = default;
  InstanceImage(int w, int h) : width(w), height(h), ids(static_cast<std::size_t>(w) * h, 0) {}

  [[nodiscard]] std::uint16_t at(int row, int col) const { return ids[static_cast<std::size_t>(row) * width + col]; }
  [[nodiscard]] std::uint16_t& at(int row, int col) { return ids[static_cast<std::size_t>(row) * width + col]; }
  [[nodiscard]] long pixels() const noexcept { return static_cast<long>(width) * height; }

  friend bool operator==(const InstanceImage&, const InstanceImage&) = default;
};

/// Number of render_instance calls made by this process.
inline std::atomic<std::uint64_t> g_render_calls{0};

[[nodiscard]] inline std::uint64_t render_call_count() noexcept { return g_render_calls.load(); }

struct Ray {
  double ox, oy, oz;
  double dx, dy, dz;
};

/// Camera basis for a pose. Forward is the optical axis; image rows grow downward.
struct CameraFrame {
  double origin[3];
  double forward[3];
  double right[3];
  double up[3];
  double tan_half_x;
  double tan_half_y;
  int width;
  int height;

  CameraFrame(const AgentState& s, const CameraConfig& cfg) {
    const double yaw = s.azimuth * kDegToRad;
    const double pitch = cfg.pitch_down_deg * kDegToRad;
    const double sy = std::sin(yaw), cy = std::cos(yaw), sp = std::sin(pitch), cp = std::cos(pitch);
    origin[0] = s.x; origin[1] = s.y; origin[2] = cfg.cam_height;
    forward[0] = sy * cp; forward[1] = cy * cp; forward[2] = -sp;
    right[0] = cy; right[1] = -sy; right[2] = 0.0;
    up[0] = sy * sp; up[1] = cy * sp; up[2] = cp;
    tan_half_x = std::tan(0.5 * cfg.fov_deg * kDegToRad);
    tan_half_y = tan_half_x * static_cast<double>(cfg.height) / cfg.width;
    width = cfg.width;
    height = cfg.height;
  }

  /// Primary ray through the center of pixel (row, col); direction is not normalized.
  [[nodiscard]] Ray ray(int row, int col) const noexcept {
    const double u = (2.0 * (col + 0.5) / width - 1.0) * tan_half_x;
    const double v = (1.0 - 2.0 * (row + 0.5) / height) * tan_half_y;
    return {origin[0], origin[1], origin[2],
            forward[0] + u * right[0] + v * up[0],
            forward[1] + u * right[1] + v * up[1],
            forward[2] + u * right[2] + v * up[2]};
  }
};

namespace detail {

struct Box {
  double lo[3];
  double hi[3];
  std::uint16_t id;
};

/// Slab test. Returns the entry distance (clamped to 0 when the origin is
/// inside) or +inf on a miss.
[[nodiscard]] inline double ray_box(const double o[3], const double d[3], const Box& b) noexcept {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < b.lo[a] || o[a] > b.hi[a]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double t1 = (b.lo[a] - o[a]) / d[a];
    double t2 = (b.hi[a] - o[a]) / d[a];
    if (t1 > t2) std::swap(t1, t2);
    t_near = std::max(t_near, t1);
    t_far = std::min(t_far, t2);
  }
  const double t_enter = std::max(t_near, 0.0);
  return t_far >= t_enter ? t_enter : std::numeric_limits<double>::infinity();
}

[[nodiscard]] inline std::vector<Box> scene_boxes(const Scene& scene) {
  std::vector<Box> boxes;
  boxes.reserve(scene.objects.size());
  for (const auto& o : scene.objects) {
    if (o.instance_id <= 0 || o.instance_id > 65535) throw DomainError("render: instance id outside 1..65535");
    boxes.push_back({{o.footprint.min_x, o.footprint.min_y, o.base_height},
                     {o.footprint.max_x, o.footprint.max_y, o.top_height},
                     static_cast<std::uint16_t>(o.instance_id)});
  }
  std::sort(boxes.begin(), boxes.end(), [](const Box& a, const Box& b) { return a.id < b.id; });
  return boxes;
}

}  // namespace detail

/// Renders the instance-id image seen from `s`.
///
/// Floor, walls and ceiling all carry id 0. Since the room is convex and every
/// object lies inside it, the nearest object hit (if any) always precedes the
/// room shell, so background pixels are exactly the rays that hit no object.
/// Equal-distance hits keep the smaller instance id.
[[nodiscard]] inline InstanceImage render_instance(const Scene& scene, const AgentState& s, const CameraConfig& cfg) {
  cfg.validate();
  require_valid(s, "render_instance");
  g_render_calls.fetch_add(1, std::memory_order_relaxed);
  const auto boxes = detail::scene_boxes(scene);
  const CameraFrame frame(s, cfg);
  InstanceImage img(cfg.width, cfg.height);
  for (int row = 0; row < cfg.height; ++row) {
    for (int col = 0; col < cfg.width; ++col) {
      const Ray r = frame.ray(row, col);
      const double o[3] = {r.ox, r.oy, r.oz};
      const double d[3] = {r.dx, r.dy, r.dz};
      double best = std::numeric_limits<double>::infinity();
      std::uint16_t best_id = 0;
      for (const auto& b : boxes) {
        const double t = detail::ray_box(o, d, b);
        if (t < best) {
          best = t;
          best_id = b.id;
        }
      }
      img.at(row, col) = best_id;
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Metrics

[[nodiscard]] inline long pixel_count(const InstanceImage& img, int instance_id) {
  if (instance_id < 0 || instance_id > 65535) return 0;
  const auto id = static_cast<std::uint16_t>(instance_id);
  return static_cast<long>(std::count(img.ids.begin(), img.ids.end(), id));
}

/// Pixels carrying any of the given ids.
[[nodiscard]] inline long pixel_count(const InstanceImage& img, std::span<const int> instance_ids) {
  long n = 0;
  for (const auto v : img.ids)
    if (v != 0 && std::find(instance_ids.begin(), instance_ids.end(), static_cast<int>(v)) != instance_ids.end()) ++n;
  return n;
}

struct Centroid {
  double col;  ///< pixel-center coordinates, 0.5 = middle of the first column
  double row;
  long pixels;
};

[[nodiscard]] inline Centroid mask_centroid(const InstanceImage& img, std::span<const int> instance_ids) {
  double sc = 0.0, sr = 0.0;
  long n = 0;
  for (int row = 0; row < img.height; ++row)
    for (int col = 0; col < img.width; ++col) {
      const std::uint16_t v = img.at(row, col);
      if (v != 0 && std::find(instance_ids.begin(), instance_ids.end(), static_cast<int>(v)) != instance_ids.end()) {
        sc += col + 0.5;
        sr += row + 0.5;
        ++n;
      }
    }
  if (n == 0) return {0.0, 0.0, 0};
  return {sc / n, sr / n, n};
}

/// Distance from the mask centroid to the image center, divided by half the
/// image diagonal. Throws if the mask is empty.
[[nodiscard]] inline double centroid_distance(const InstanceImage& img, std::span<const int> instance_ids) {
  const Centroid c = mask_centroid(img, instance_ids);
  if (c.pixels == 0) throw DomainError("centroid_distance: instance not visible");
  const double half_diag = 0.5 * std::hypot(img.width, img.height);
  return std::hypot(c.col - 0.5 * img.width, c.row - 0.5 * img.height) / half_diag;
}

[[nodiscard]] inline double centroid_distance(const InstanceImage& img, int instance_id) {
  const int ids[1] = {instance_id};
  return centroid_distance(img, std::span<const int>(ids));
}

/// Non-background ids present in the image with their pixel counts.
[[nodiscard]] inline std::map<int, long> visible_instances(const InstanceImage& img) {
  std::map<int, long> out;
  for (const auto v : img.ids)
    if (v != 0) ++out[v];
  return out;
}

// ---------------------------------------------------------------------------
// Image files

/// 16-bit binary PGM, big-endian samples.
[[nodiscard]] inline std::string encode_pgm(const InstanceImage& img) {
  std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n65535\n";
  std::string out = header;
  out.reserve(header.size() + img.ids.size() * 2);
  for (const auto v : img.ids) {
    out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xff));
  }
  return out;
}

[[nodiscard]] inline InstanceImage decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_space();
    long v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
      if (v > 1'000'000) throw IoError("pgm: header value too large");
    }
    if (!any) throw IoError("pgm: malformed header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw IoError("pgm: not a binary P5 file");
  pos = 2;
  const long w = read_int(), h = read_int(), maxval = read_int();
  if (maxval != 65535) throw IoError("pgm: expected maxval 65535");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) throw IoError("pgm: malformed header");
  ++pos;
  if (w <= 0 || h <= 0) throw IoError("pgm: bad dimensions");
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() - pos != 2 * n) throw IoError("pgm: payload size mismatch");
  InstanceImage img(static_cast<int>(w), static_cast<int>(h));
  for (std::size_t i = 0; i < n; ++i)
    img.ids[i] = static_cast<std::uint16_t>((static_cast<unsigned char>(bytes[pos + 2 * i]) << 8) |
                                            static_cast<unsigned char>(bytes[pos + 2 * i + 1]));
  return img;
}

/// False-color preview (binary PPM). Background is dark gray.
[[nodiscard]] inline std::string encode_ppm_preview(const InstanceImage& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.ids.size() * 3);
  for (const auto v : img.ids) {
    if (v == 0) {
      out.append(3, static_cast<char>(40));
      continue;
    }
    const std::uint64_t h = mix_seed(v);
    out.push_back(static_cast<char>(64 + (h & 0xbf)));
    out.push_back(static_cast<char>(64 + ((h >> 8) & 0xbf)));
    out.push_back(static_cast<char>(64 + ((h >> 16) & 0xbf)));
  }
  return out;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

[[nodiscard]] inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace avs
