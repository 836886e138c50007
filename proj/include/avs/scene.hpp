#pragma once
/**
 * @file scene.hpp
 * @brief Single-room indoor scenes built from axis-aligned cuboids.
 *
 * Supporting objects (tables, desks, counters) stand on the floor and carry
 * smaller target objects on their top surface. Floor clutter acts as extra
 * occluders and obstacles. Instance id 0 is reserved for the background.
 */

#include <avs/error.hpp>
#include <avs/geometry.hpp>
#include <avs/rng.hpp>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace avs {

struct Rect {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;

  [[nodiscard]] double width() const noexcept { return max_x - min_x; }
  [[nodiscard]] double depth() const noexcept { return max_y - min_y; }
  [[nodiscard]] double area() const noexcept { return width() * depth(); }
  [[nodiscard]] double center_x() const noexcept { return 0.5 * (min_x + max_x); }
  [[nodiscard]] double center_y() const noexcept { return 0.5 * (min_y + max_y); }

  [[nodiscard]] bool contains(const Rect& o) const noexcept {
    return o.min_x >= min_x && o.max_x <= max_x && o.min_y >= min_y && o.max_y <= max_y;
  }
  /// Open-interior overlap; rectangles sharing only an edge do not overlap.
  [[nodiscard]] bool overlaps(const Rect& o) const noexcept {
    return min_x < o.max_x && o.min_x < max_x && min_y < o.max_y && o.min_y < max_y;
  }
  [[nodiscard]] Rect inflated(double m) const noexcept { return {min_x - m, min_y - m, max_x + m, max_y + m}; }

  /// Euclidean distance from a point to the closed rectangle (0 inside).
  [[nodiscard]] double distance_to(double x, double y) const noexcept {
    const double ddx = std::max({min_x - x, 0.0, x - max_x});
    const double ddy = std::max({min_y - y, 0.0, y - max_y});
    return std::hypot(ddx, ddy);
  }

  friend bool operator==(const Rect&, const Rect&) = default;
};

enum class QuestionType { existence, counting, state };

[[nodiscard]] inline std::string to_string(QuestionType q) {
  switch (q) {
    case QuestionType::existence: return "existence";
    case QuestionType::counting: return "counting";
    case QuestionType::state: return "state";
  }
  return "unknown";
}

[[nodiscard]] inline QuestionType parse_question_type(const std::string& s) {
  if (s == "existence") return QuestionType::existence;
  if (s == "counting") return QuestionType::counting;
  if (s == "state") return QuestionType::state;
  throw DomainError("unknown question type: " + s);
}

struct ObjectInstance {
  int instance_id = 0;
  std::string class_name;
  Rect footprint;
  double base_height = 0.0;
  double top_height = 0.0;
  bool is_supporting = false;
  std::optional<int> supported_by;
  std::optional<std::string> state;

  friend bool operator==(const ObjectInstance&, const ObjectInstance&) = default;
};

struct Scene {
  std::string scene_id;
  Rect room;
  double wall_height = 250.0;
  std::vector<ObjectInstance> objects;
  std::uint64_t rng_seed = 0;

  [[nodiscard]] const ObjectInstance* find(int id) const noexcept {
    for (const auto& o : objects)
      if (o.instance_id == id) return &o;
    return nullptr;
  }
  [[nodiscard]] const ObjectInstance& at(int id) const {
    if (const auto* o = find(id)) return *o;
    throw DomainError("scene " + scene_id + ": no instance " + std::to_string(id));
  }
  [[nodiscard]] std::vector<const ObjectInstance*> children_of(int support_id) const {
    std::vector<const ObjectInstance*> out;
    for (const auto& o : objects)
      if (o.supported_by == support_id) out.push_back(&o);
    return out;
  }
  [[nodiscard]] int max_instance_id() const noexcept {
    int m = 0;
    for (const auto& o : objects) m = std::max(m, o.instance_id);
    return m;
  }

  friend bool operator==(const Scene&, const Scene&) = default;
};

// ---------------------------------------------------------------------------
// Class catalog

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Where instances of a class may be placed.
enum class Placement { floor_support, surface, floor_clutter };

struct ClassSpec {
  std::string name;
  Placement placement = Placement::surface;
  Range width;   ///< x extent, cm
  Range depth;   ///< y extent, cm
  Range height;  ///< cm
  std::vector<std::string> states;  ///< empty, or exactly two members

  [[nodiscard]] bool is_supporting() const noexcept { return placement == Placement::floor_support; }
  [[nodiscard]] bool has_states() const noexcept { return !states.empty(); }
};

class ClassCatalog {
public:
  ClassCatalog() = default;
  explicit ClassCatalog(std::vector<ClassSpec> classes) : classes_(std::move(classes)) { check(); }

  [[nodiscard]] const std::vector<ClassSpec>& classes() const noexcept { return classes_; }

  [[nodiscard]] const ClassSpec* find(const std::string& name) const noexcept {
    for (const auto& c : classes_)
      if (c.name == name) return &c;
    return nullptr;
  }
  [[nodiscard]] const ClassSpec& at(const std::string& name) const {
    if (const auto* c = find(name)) return *c;
    throw DomainError("catalog: unknown class " + name);
  }
  [[nodiscard]] std::vector<const ClassSpec*> with_placement(Placement p) const {
    std::vector<const ClassSpec*> out;
    for (const auto& c : classes_)
      if (c.placement == p) out.push_back(&c);
    return out;
  }

  static ClassCatalog from_json(const nlohmann::json& j);
  static ClassCatalog load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open catalog " + path);
    return from_json(nlohmann::json::parse(in));
  }

private:
  void check() const {
    std::set<std::string> names;
    for (const auto& c : classes_) {
      if (!names.insert(c.name).second) throw DomainError("catalog: duplicate class " + c.name);
      if (!c.states.empty() && c.states.size() != 2)
        throw DomainError("catalog: class " + c.name + " must declare exactly two states");
      if (c.width.lo <= 0 || c.depth.lo <= 0 || c.height.lo <= 0 || c.width.hi < c.width.lo ||
          c.depth.hi < c.depth.lo || c.height.hi < c.height.lo)
        throw DomainError("catalog: bad size range for " + c.name);
    }
  }
  std::vector<ClassSpec> classes_;
};

#ifdef AVS_DEFAULT_CATALOG
inline const char* default_catalog_path() { return AVS_DEFAULT_CATALOG; }
#else
inline const char* default_catalog_path() { return "data/catalog.json"; }
#endif

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const Rect& r) {
  j = {{"min_x", r.min_x}, {"min_y", r.min_y}, {"max_x", r.max_x}, {"max_y", r.max_y}};
}
inline void from_json(const nlohmann::json& j, Rect& r) {
  r = {j.at("min_x").get<double>(), j.at("min_y").get<double>(), j.at("max_x").get<double>(),
       j.at("max_y").get<double>()};
}

inline void to_json(nlohmann::json& j, const ObjectInstance& o) {
  j = nlohmann::json::object();
  j["instance_id"] = o.instance_id;
  j["class_name"] = o.class_name;
  j["footprint"] = o.footprint;
  j["base_height"] = o.base_height;
  j["top_height"] = o.top_height;
  j["is_supporting"] = o.is_supporting;
  j["supported_by"] = o.supported_by ? nlohmann::json(*o.supported_by) : nlohmann::json(nullptr);
  j["state"] = o.state ? nlohmann::json(*o.state) : nlohmann::json(nullptr);
}
inline void from_json(const nlohmann::json& j, ObjectInstance& o) {
  o.instance_id = j.at("instance_id").get<int>();
  o.class_name = j.at("class_name").get<std::string>();
  o.footprint = j.at("footprint").get<Rect>();
  o.base_height = j.at("base_height").get<double>();
  o.top_height = j.at("top_height").get<double>();
  o.is_supporting = j.at("is_supporting").get<bool>();
  const auto& sb = j.at("supported_by");
  o.supported_by = sb.is_null() ? std::nullopt : std::optional<int>(sb.get<int>());
  const auto& st = j.at("state");
  o.state = st.is_null() ? std::nullopt : std::optional<std::string>(st.get<std::string>());
}

inline void to_json(nlohmann::json& j, const Scene& s) {
  j = nlohmann::json::object();
  j["scene_id"] = s.scene_id;
  j["room"] = s.room;
  j["wall_height"] = s.wall_height;
  j["objects"] = s.objects;
  j["rng_seed"] = s.rng_seed;
}
inline void from_json(const nlohmann::json& j, Scene& s) {
  s.scene_id = j.at("scene_id").get<std::string>();
  s.room = j.at("room").get<Rect>();
  s.wall_height = j.at("wall_height").get<double>();
  s.objects = j.at("objects").get<std::vector<ObjectInstance>>();
  s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
}

inline ClassCatalog ClassCatalog::from_json(const nlohmann::json& j) {
  auto range = [](const nlohmann::json& r) { return Range{r.at(0).get<double>(), r.at(1).get<double>()}; };
  std::vector<ClassSpec> classes;
  for (const auto& c : j.at("classes")) {
    ClassSpec spec;
    spec.name = c.at("name").get<std::string>();
    const auto placement = c.at("placement").get<std::string>();
    if (placement == "support") spec.placement = Placement::floor_support;
    else if (placement == "surface") spec.placement = Placement::surface;
    else if (placement == "floor") spec.placement = Placement::floor_clutter;
    else throw DomainError("catalog: unknown placement " + placement);
    spec.width = range(c.at("width"));
    spec.depth = range(c.at("depth"));
    spec.height = range(c.at("height"));
    if (c.contains("states")) spec.states = c.at("states").get<std::vector<std::string>>();
    classes.push_back(std::move(spec));
  }
  return ClassCatalog(std::move(classes));
}

// ---------------------------------------------------------------------------
// Validation

/// Independent re-check of every scene invariant. Returns one message per violation.
[[nodiscard]] inline std::vector<std::string> validate_scene(const Scene& scene, const ClassCatalog* catalog = nullptr) {
  std::vector<std::string> v;
  auto tag = [](const ObjectInstance& o) { return o.class_name + "#" + std::to_string(o.instance_id); };
  if (scene.room.area() <= 0) v.push_back("room has non-positive area");
  if (scene.wall_height <= 0) v.push_back("non-positive wall height");
  std::set<int> ids;
  for (const auto& o : scene.objects) {
    if (o.instance_id <= 0) v.push_back(tag(o) + ": id must be non-zero and positive");
    if (o.instance_id > 65535) v.push_back(tag(o) + ": id exceeds 16-bit range");
    if (!ids.insert(o.instance_id).second) v.push_back(tag(o) + ": duplicate id");
    if (!(o.top_height > o.base_height && o.base_height >= 0)) v.push_back(tag(o) + ": bad heights");
    if (!(o.footprint.width() > 0 && o.footprint.depth() > 0)) v.push_back(tag(o) + ": degenerate footprint");
    if (!scene.room.contains(o.footprint)) v.push_back(tag(o) + ": footprint outside room");
    if (o.top_height > scene.wall_height) v.push_back(tag(o) + ": taller than the room");
    if (o.supported_by) {
      const ObjectInstance* parent = scene.find(*o.supported_by);
      if (parent == nullptr) {
        v.push_back(tag(o) + ": missing parent");
      } else {
        if (!parent->is_supporting) v.push_back(tag(o) + ": parent is not a supporting object");
        if (o.base_height != parent->top_height) v.push_back(tag(o) + ": not resting on parent top");
        if (!parent->footprint.contains(o.footprint)) v.push_back(tag(o) + ": footprint exceeds parent");
      }
    }
    if (catalog != nullptr) {
      const ClassSpec* spec = catalog->find(o.class_name);
      if (spec == nullptr) {
        v.push_back(tag(o) + ": class missing from catalog");
      } else {
        if (spec->has_states() != o.state.has_value()) v.push_back(tag(o) + ": state presence mismatch");
        if (o.state && std::find(spec->states.begin(), spec->states.end(), *o.state) == spec->states.end())
          v.push_back(tag(o) + ": unknown state " + *o.state);
        if (spec->is_supporting() != o.is_supporting) v.push_back(tag(o) + ": supporting flag mismatch");
      }
    }
  }
  for (std::size_t i = 0; i < scene.objects.size(); ++i)
    for (std::size_t k = i + 1; k < scene.objects.size(); ++k) {
      const auto& a = scene.objects[i];
      const auto& b = scene.objects[k];
      if (a.is_supporting && b.is_supporting && a.footprint.overlaps(b.footprint))
        v.push_back(tag(a) + " overlaps " + tag(b));
    }
  return v;
}

// ---------------------------------------------------------------------------
// Collision

inline constexpr double kDefaultAgentRadius = 20.0;

/// True iff the agent disc lies inside the room with `agent_radius` margin and
/// touches no object footprint interior.
[[nodiscard]] inline bool collision_free(const Scene& scene, const AgentState& s,
                                         double agent_radius = kDefaultAgentRadius) {
  const Rect& room = scene.room;
  if (s.x - agent_radius < room.min_x || s.x + agent_radius > room.max_x || s.y - agent_radius < room.min_y ||
      s.y + agent_radius > room.max_y)
    return false;
  for (const auto& o : scene.objects)
    if (o.footprint.distance_to(s.x, s.y) < agent_radius) return false;
  return true;
}

namespace detail {

[[nodiscard]] inline double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

/// Liang-Barsky: does segment a->b touch the closed rectangle?
[[nodiscard]] inline bool segment_hits_rect(double ax, double ay, double bx, double by, const Rect& r) {
  double t0 = 0.0, t1 = 1.0;
  const double dx = bx - ax, dy = by - ay;
  const std::array<double, 4> p{-dx, dx, -dy, dy};
  const std::array<double, 4> q{ax - r.min_x, r.max_x - ax, ay - r.min_y, r.max_y - ay};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
    } else {
      const double t = q[i] / p[i];
      if (p[i] < 0.0) t0 = std::max(t0, t);
      else t1 = std::min(t1, t);
      if (t0 > t1) return false;
    }
  }
  return true;
}

[[nodiscard]] inline double segment_rect_distance(double ax, double ay, double bx, double by, const Rect& r) {
  if (segment_hits_rect(ax, ay, bx, by, r)) return 0.0;
  double d = std::min(r.distance_to(ax, ay), r.distance_to(bx, by));
  const std::array<std::pair<double, double>, 4> corners{
      {{r.min_x, r.min_y}, {r.min_x, r.max_y}, {r.max_x, r.min_y}, {r.max_x, r.max_y}}};
  for (const auto& [cx, cy] : corners) d = std::min(d, point_segment_distance(cx, cy, ax, ay, bx, by));
  return d;
}

}  // namespace detail

/// True iff the agent disc can sweep in a straight line from `from` to `to`.
[[nodiscard]] inline bool path_collision_free(const Scene& scene, const AgentState& from, const AgentState& to,
                                              double agent_radius = kDefaultAgentRadius) {
  if (!collision_free(scene, from, agent_radius) || !collision_free(scene, to, agent_radius)) return false;
  for (const auto& o : scene.objects)
    if (detail::segment_rect_distance(from.x, from.y, to.x, to.y, o.footprint) < agent_radius) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Generation

struct GenerationConfig {
  Range room_side{400.0, 800.0};
  double wall_height = 250.0;
  int min_supports = 2;
  int max_supports = 3;
  int min_targets_per_support = 1;
  int max_targets_per_support = 2;
  int min_floor_objects = 0;
  int max_floor_objects = 2;
  double wall_clearance = 50.0;     ///< free band between walls and furniture
  double furniture_clearance = 70.0;  ///< free gap between floor objects
  double surface_gap = 3.0;          ///< gap between objects on one surface
  double center_band = 0.2;          ///< first target lies within this fraction of the support center
  int max_retries = 200;
};

namespace detail {

[[nodiscard]] inline double sample_range(Rng& rng, const Range& r) { return r.hi > r.lo ? rng.uniform(r.lo, r.hi) : r.lo; }

inline ObjectInstance make_instance(int id, const ClassSpec& spec, const Rect& footprint, double base, double height,
                                    Rng& rng) {
  ObjectInstance o;
  o.instance_id = id;
  o.class_name = spec.name;
  o.footprint = footprint;
  o.base_height = base;
  o.top_height = base + height;
  o.is_supporting = spec.is_supporting();
  if (spec.has_states()) o.state = spec.states[rng.index(spec.states.size())];
  return o;
}

/// Tries to place a w x d rectangle inside `area` with its center restricted
/// to `center_area`, clear of every rectangle in `blocked` by `gap`.
[[nodiscard]] inline std::optional<Rect> place_rect(Rng& rng, double w, double d, const Rect& area,
                                                    const std::vector<Rect>& blocked, double gap, int retries,
                                                    std::optional<Rect> center_area = std::nullopt) {
  Rect feasible{area.min_x + w / 2, area.min_y + d / 2, area.max_x - w / 2, area.max_y - d / 2};
  if (center_area) {
    feasible.min_x = std::max(feasible.min_x, center_area->min_x);
    feasible.min_y = std::max(feasible.min_y, center_area->min_y);
    feasible.max_x = std::min(feasible.max_x, center_area->max_x);
    feasible.max_y = std::min(feasible.max_y, center_area->max_y);
  }
  if (feasible.min_x > feasible.max_x || feasible.min_y > feasible.max_y) return std::nullopt;
  for (int attempt = 0; attempt < retries; ++attempt) {
    const double cx = rng.uniform(feasible.min_x, feasible.max_x);
    const double cy = rng.uniform(feasible.min_y, feasible.max_y);
    Rect r{cx - w / 2, cy - d / 2, cx + w / 2, cy + d / 2};
    r.min_x = std::max(r.min_x, area.min_x);
    r.min_y = std::max(r.min_y, area.min_y);
    r.max_x = std::min(r.max_x, area.max_x);
    r.max_y = std::min(r.max_y, area.max_y);
    const bool clear = std::none_of(blocked.begin(), blocked.end(), [&](const Rect& b) { return r.overlaps(b.inflated(gap)); });
    if (clear) return r;
  }
  return std::nullopt;
}

}  // namespace detail

/// Procedurally builds a room; deterministic in (seed, config, catalog).
[[nodiscard]] inline Scene generate_scene(std::uint64_t seed, const GenerationConfig& cfg, const ClassCatalog& catalog) {
  if (cfg.min_supports < 1 || cfg.max_supports < cfg.min_supports || cfg.min_targets_per_support < 1 ||
      cfg.max_targets_per_support < cfg.min_targets_per_support || cfg.min_floor_objects < 0 ||
      cfg.max_floor_objects < cfg.min_floor_objects)
    throw DomainError("generate_scene: inconsistent object counts");
  const auto supports = catalog.with_placement(Placement::floor_support);
  const auto surface = catalog.with_placement(Placement::surface);
  const auto clutter = catalog.with_placement(Placement::floor_clutter);
  if (supports.empty() || surface.empty()) throw DomainError("generate_scene: catalog lacks supports or targets");

  Rng rng(seed);
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    Scene scene;
    scene.scene_id = "scene_" + std::to_string(seed);
    scene.rng_seed = seed;
    scene.wall_height = cfg.wall_height;
    scene.room = {0.0, 0.0, std::round(detail::sample_range(rng, cfg.room_side)),
                  std::round(detail::sample_range(rng, cfg.room_side))};
    const Rect usable = scene.room.inflated(-cfg.wall_clearance);
    std::vector<Rect> floor_blocked;
    int next_id = 1;
    bool ok = true;

    const int n_sup = static_cast<int>(rng.uniform_int(cfg.min_supports, cfg.max_supports));
    for (int i = 0; i < n_sup && ok; ++i) {
      const ClassSpec& spec = *supports[rng.index(supports.size())];
      double w = detail::sample_range(rng, spec.width);
      double d = detail::sample_range(rng, spec.depth);
      if (rng.bernoulli(0.5)) std::swap(w, d);
      const double h = detail::sample_range(rng, spec.height);
      auto fp = detail::place_rect(rng, w, d, usable, floor_blocked, cfg.furniture_clearance, cfg.max_retries);
      if (!fp) { ok = false; break; }
      floor_blocked.push_back(*fp);
      scene.objects.push_back(detail::make_instance(next_id++, spec, *fp, 0.0, h, rng));
    }
    if (!ok) continue;

    const std::size_t n_placed_supports = scene.objects.size();
    for (std::size_t si = 0; si < n_placed_supports && ok; ++si) {
      const ObjectInstance support = scene.objects[si];
      const int n_tgt = static_cast<int>(rng.uniform_int(cfg.min_targets_per_support, cfg.max_targets_per_support));
      std::vector<Rect> on_top;
      for (int t = 0; t < n_tgt; ++t) {
        const ClassSpec& spec = *surface[rng.index(surface.size())];
        double w = detail::sample_range(rng, spec.width);
        double d = detail::sample_range(rng, spec.depth);
        if (rng.bernoulli(0.5)) std::swap(w, d);
        const double h = detail::sample_range(rng, spec.height);
        std::optional<Rect> center;
        if (t == 0) {
          const Rect& f = support.footprint;
          const double bx = cfg.center_band * f.width() / 2, by = cfg.center_band * f.depth() / 2;
          center = Rect{f.center_x() - bx, f.center_y() - by, f.center_x() + bx, f.center_y() + by};
        }
        auto fp = detail::place_rect(rng, w, d, support.footprint, on_top, cfg.surface_gap, cfg.max_retries, center);
        if (!fp) {
          if (t == 0) ok = false;
          break;
        }
        on_top.push_back(*fp);
        auto child = detail::make_instance(next_id++, spec, *fp, support.top_height, h, rng);
        child.supported_by = support.instance_id;
        scene.objects.push_back(std::move(child));
      }
    }
    if (!ok) continue;

    if (!clutter.empty()) {
      const int n_floor = static_cast<int>(rng.uniform_int(cfg.min_floor_objects, cfg.max_floor_objects));
      for (int i = 0; i < n_floor; ++i) {
        const ClassSpec& spec = *clutter[rng.index(clutter.size())];
        const double w = detail::sample_range(rng, spec.width);
        const double d = detail::sample_range(rng, spec.depth);
        const double h = detail::sample_range(rng, spec.height);
        auto fp = detail::place_rect(rng, w, d, usable, floor_blocked, cfg.furniture_clearance, cfg.max_retries);
        if (!fp) continue;  // clutter is optional
        floor_blocked.push_back(*fp);
        scene.objects.push_back(detail::make_instance(next_id++, spec, *fp, 0.0, h, rng));
      }
    }
    return scene;
  }
  throw GenerationError("generate_scene: configuration infeasible after " + std::to_string(cfg.max_retries) +
                        " attempts (seed " + std::to_string(seed) + ")");
}

/// (support, target) pairs present in a scene.
[[nodiscard]] inline std::vector<std::pair<int, int>> support_target_pairs(const Scene& scene) {
  std::vector<std::pair<int, int>> out;
  for (const auto& o : scene.objects)
    if (o.supported_by) out.emplace_back(*o.supported_by, o.instance_id);
  return out;
}

struct ModifiedScene {
  Scene scene;
  std::vector<int> target_ids;  ///< every instance the question refers to
  int count = 1;
};

/// Adjusts a scene so that it suits the given question type.
///
/// existence leaves the scene alone. counting puts 2-5 copies of the target
/// (same size) on the support, replacing other same-class children of that
/// support. state reassigns the target's state at random.
[[nodiscard]] inline ModifiedScene modify_for_question_type(const Scene& scene, std::pair<int, int> pair,
                                                            QuestionType qtype, std::uint64_t seed,
                                                            const ClassCatalog& catalog, int max_retries = 200,
                                                            double surface_gap = 3.0) {
  const auto [support_id, target_id] = pair;
  const ObjectInstance& support = scene.at(support_id);
  const ObjectInstance& target = scene.at(target_id);
  if (!support.is_supporting || target.supported_by != support_id)
    throw DomainError("modify_for_question_type: target is not on the support");

  Rng rng(seed);
  ModifiedScene out{scene, {target_id}, 1};
  switch (qtype) {
    case QuestionType::existence: return out;
    case QuestionType::state: {
      const ClassSpec& spec = catalog.at(target.class_name);
      if (!spec.has_states()) throw DomainError("modify_for_question_type: class " + spec.name + " has no states");
      for (auto& o : out.scene.objects)
        if (o.instance_id == target_id) o.state = spec.states[rng.index(spec.states.size())];
      return out;
    }
    case QuestionType::counting: {
      const int n = static_cast<int>(rng.uniform_int(2, 5));
      std::erase_if(out.scene.objects, [&](const ObjectInstance& o) {
        return o.supported_by == support_id && o.class_name == target.class_name && o.instance_id != target_id;
      });
      std::vector<Rect> occupied;
      for (const auto* c : out.scene.children_of(support_id)) occupied.push_back(c->footprint);
      const double w = target.footprint.width(), d = target.footprint.depth();
      int next_id = scene.max_instance_id() + 1;
      const ClassSpec* spec = catalog.find(target.class_name);
      for (int k = 1; k < n; ++k) {
        auto fp = detail::place_rect(rng, w, d, support.footprint, occupied, surface_gap, max_retries);
        if (!fp) throw SampleSkip("counting: cannot fit " + std::to_string(n) + " " + target.class_name);
        occupied.push_back(*fp);
        ObjectInstance copy = target;
        copy.instance_id = next_id++;
        copy.footprint = *fp;
        if (spec != nullptr && spec->has_states()) copy.state = spec->states[rng.index(spec->states.size())];
        out.target_ids.push_back(copy.instance_id);
        out.scene.objects.push_back(std::move(copy));
      }
      out.count = n;
      return out;
    }
  }
  throw DomainError("modify_for_question_type: unknown question type");
}

}  // namespace avs
