#pragma once
// Shared helpers for the test binaries.

#include <avs/curate.hpp>
#include <avs/render.hpp>
#include <avs/scene.hpp>

#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <unistd.h>

namespace avs::testkit {

namespace fs = std::filesystem;

/// Brute-force renderer built separately from the production one: the ray
/// comes from composing pitch and yaw rotations of a camera-space vector,
/// and each box is hit by testing its six face planes.
inline InstanceImage naive_render(const Scene& scene, const AgentState& s, const CameraConfig& cam) {
  InstanceImage img(cam.width, cam.height);
  const double p = cam.pitch_down_deg * std::numbers::pi / 180.0;
  const double a = s.azimuth * std::numbers::pi / 180.0;
  const double th = std::tan(cam.fov_deg * std::numbers::pi / 360.0);
  const std::array<double, 3> o{s.x, s.y, cam.cam_height};
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      // camera space: x right, y forward, z up
      const double u = (2.0 * (c + 0.5) / cam.width - 1.0) * th;
      const double v = (1.0 - 2.0 * (r + 0.5) / cam.height) * th * cam.height / cam.width;
      const double px = u, py = std::cos(p) + v * std::sin(p), pz = -std::sin(p) + v * std::cos(p);
      const std::array<double, 3> d{px * std::cos(a) + py * std::sin(a), -px * std::sin(a) + py * std::cos(a), pz};
      double best = std::numeric_limits<double>::infinity();
      int best_id = 0;
      for (const auto& obj : scene.objects) {
        const std::array<double, 3> lo{obj.footprint.min_x, obj.footprint.min_y, obj.base_height};
        const std::array<double, 3> hi{obj.footprint.max_x, obj.footprint.max_y, obj.top_height};
        for (int axis = 0; axis < 3; ++axis) {
          if (d[axis] == 0.0) continue;
          for (const double plane : {lo[axis], hi[axis]}) {
            const double t = (plane - o[axis]) / d[axis];
            if (t < 0.0) continue;
            bool inside = true;
            for (int k = 0; k < 3 && inside; ++k) {
              if (k == axis) continue;
              const double q = o[k] + t * d[k];
              inside = q >= lo[k] && q <= hi[k];
            }
            if (!inside) continue;
            if (t < best || (t == best && obj.instance_id < best_id)) {
              best = t;
              best_id = obj.instance_id;
            }
          }
        }
      }
      img.at(r, c) = static_cast<std::uint16_t>(best_id);
    }
  }
  return img;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag = "avs") {
    path_ = fs::temp_directory_path() / (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  [[nodiscard]] const fs::path& path() const noexcept { return path_; }

private:
  static int& counter() {
    static int n = 0;
    return n;
  }
  fs::path path_;
};

inline CurationConfig small_config(std::uint64_t seed = 11, int scenes = 10) {
  CurationConfig c;
  c.seed = seed;
  c.num_scenes = scenes;
  c.per_scene = 3;
  c.qtypes = {QuestionType::existence, QuestionType::counting, QuestionType::state};
  c.camera.width = c.camera.height = 128;
  return c;
}

/// A small curated set shared by every test in the binary.
inline const fs::path& shared_dataset() {
  static TempDir dir("avs-shared");
  static const bool built = [] {
    (void)curate_dataset(small_config(), dir.path() / "small");
    return true;
  }();
  (void)built;
  static const fs::path p = dir.path() / "small";
  return p;
}

/// A collision-free random pose in the scene.
inline AgentState random_free_pose(const Scene& scene, Rng& rng) {
  for (int i = 0; i < 10000; ++i) {
    const AgentState s{rng.uniform(scene.room.min_x, scene.room.max_x), rng.uniform(scene.room.min_y, scene.room.max_y),
                       normalize_angle(rng.uniform(-180.0, 180.0))};
    if (collision_free(scene, s, kDefaultAgentRadius)) return s;
  }
  throw std::runtime_error("no free pose");
}

}  // namespace avs::testkit
