#pragma once
/**
 * @file curate.hpp
 * @brief Three-stage dataset curation (scene modification, viewpoint
 *        sampling, question generation with answerability filtering) and an
 *        independent dataset validator.
 *
 * Dataset layout:
 *   manifest.json   config, thresholds, catalog, statistics
 *   samples.jsonl   one SampleRecord per line
 *   scenes/<id>.json every scene a sample refers to
 *   views/<sample_id>_{qry,tgt}.pgm (+ .ppm previews)
 */

#include <avs/error.hpp>
#include <avs/geometry.hpp>
#include <avs/parallel.hpp>
#include <avs/record.hpp>
#include <avs/render.hpp>
#include <avs/reward.hpp>
#include <avs/rng.hpp>
#include <avs/scene.hpp>

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace avs {

namespace fs = std::filesystem;

/// Pose sampling parameters for target and query views.
struct ViewSampling {
  double min_radius = 60.0;  ///< cm from the support centroid
  double max_radius = 250.0;
  double radius_step = 10.0;
  int directions = 24;       ///< polar grid resolution
  int closest_poses = 10;
  int query_candidates = 10;
  int max_heading = 45;      ///< |heading| for backing away, degrees
  int min_backward = 50;     ///< cm
  int max_backward = 150;
  int min_view = 15;         ///< |view| in [min_view, max_view], degrees
  int max_view = 45;
  double agent_radius = kDefaultAgentRadius;
};

inline void to_json(nlohmann::json& j, const ViewSampling& v) {
  j = {{"min_radius", v.min_radius}, {"max_radius", v.max_radius}, {"radius_step", v.radius_step},
       {"directions", v.directions}, {"closest_poses", v.closest_poses}, {"query_candidates", v.query_candidates},
       {"max_heading", v.max_heading}, {"min_backward", v.min_backward}, {"max_backward", v.max_backward},
       {"min_view", v.min_view}, {"max_view", v.max_view}, {"agent_radius", v.agent_radius}};
}

namespace detail {

[[nodiscard]] inline long mask_pixels(const InstanceImage& img, std::span<const int> ids) { return pixel_count(img, ids); }

/// Target-view test on a single view: visible enough and centered.
[[nodiscard]] inline bool is_target_view(const InstanceImage& img, std::span<const int> targets,
                                         const CurationThresholds& thr) {
  const long n = mask_pixels(img, targets);
  if (!(static_cast<double>(n) > thr.eps_vis_obj)) return false;
  return centroid_distance(img, targets) < thr.delta_center;
}

/// Query-view test: every target hidden, support clearly visible.
[[nodiscard]] inline bool is_query_view(const InstanceImage& img, std::span<const int> targets, int support_id,
                                        const CurationThresholds& thr) {
  const auto counts = visible_instances(img);
  for (const int id : targets) {
    const auto it = counts.find(id);
    if (it != counts.end() && !(static_cast<double>(it->second) < thr.eps_inv_obj)) return false;
  }
  const auto it = counts.find(support_id);
  return it != counts.end() && static_cast<double>(it->second) > thr.eps_vis_sup;
}

}  // namespace detail

/// Collision-free poses on a polar grid around the support, facing its
/// centroid, ordered by distance to the support footprint (closest first).
[[nodiscard]] inline std::vector<AgentState> target_pose_candidates(const Scene& scene, int support_id,
                                                                    const ViewSampling& vs) {
  const ObjectInstance& support = scene.at(support_id);
  const double cx = support.footprint.center_x(), cy = support.footprint.center_y();
  std::vector<std::pair<double, AgentState>> cands;
  for (double r = vs.min_radius; r <= vs.max_radius + 1e-9; r += vs.radius_step) {
    for (int k = 0; k < vs.directions; ++k) {
      const double theta = 360.0 * k / vs.directions;
      const Direction dir = direction_of(theta);
      AgentState s{cx + r * dir.dx, cy + r * dir.dy, 0.0};
      s.azimuth = normalize_angle(std::atan2(cx - s.x, cy - s.y) * kRadToDeg);
      if (!collision_free(scene, s, vs.agent_radius)) continue;
      cands.emplace_back(support.footprint.distance_to(s.x, s.y), s);
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<AgentState> out;
  for (std::size_t i = 0; i < cands.size() && static_cast<int>(i) < vs.closest_poses; ++i) out.push_back(cands[i].second);
  return out;
}

/// Picks a target pose among the closest candidates whose render satisfies
/// the target-view rule for the union of `target_ids`.
[[nodiscard]] inline AgentState sample_target_view(const Scene& scene, int support_id, std::span<const int> target_ids,
                                                   const CurationThresholds& thr, const CameraConfig& cam,
                                                   std::uint64_t seed, const ViewSampling& vs = {}) {
  for (const int id : target_ids) {
    const ObjectInstance& t = scene.at(id);
    if (t.supported_by != support_id) throw DomainError("sample_target_view: target not on support");
  }
  const auto cands = target_pose_candidates(scene, support_id, vs);
  std::vector<AgentState> passing;
  for (const auto& s : cands)
    if (detail::is_target_view(render_instance(scene, s, cam), target_ids, thr)) passing.push_back(s);
  if (passing.empty()) throw SampleSkip("no target view candidate satisfies the visibility rule");
  Rng rng(seed);
  return passing[rng.index(passing.size())];
}

struct QueryView {
  AgentState s_qry;
  Action a_tgt;
};

/// Backs away from the target pose with random integer perturbations and
/// keeps one that hides every target while showing the support.
[[nodiscard]] inline QueryView sample_query_view(const Scene& scene, const AgentState& s_tgt,
                                                 std::span<const int> target_ids, int support_id,
                                                 const CurationThresholds& thr, const CameraConfig& cam,
                                                 std::uint64_t seed, const ViewSampling& vs = {}) {
  require_valid(s_tgt, "sample_query_view");
  Rng rng(seed);
  std::vector<AgentState> passing;
  for (int i = 0; i < vs.query_candidates; ++i) {
    const auto heading = static_cast<double>(rng.uniform_int(-vs.max_heading, vs.max_heading));
    const auto back = static_cast<double>(rng.uniform_int(vs.min_backward, vs.max_backward));
    auto view = static_cast<double>(rng.uniform_int(vs.min_view, vs.max_view));
    if (rng.bernoulli(0.5)) view = -view;
    const AgentState s = backward_transition(s_tgt, heading, back, view);
    if (!path_collision_free(scene, s, s_tgt, vs.agent_radius)) continue;
    if (detail::is_query_view(render_instance(scene, s, cam), target_ids, support_id, thr)) passing.push_back(s);
  }
  if (passing.empty()) throw SampleSkip("no query view candidate hides the target");
  const AgentState chosen = passing[rng.index(passing.size())];
  return {chosen, inverse_action(chosen, s_tgt)};
}

// ---------------------------------------------------------------------------
// Questions

struct Question {
  std::string text;
  std::string answer;
  std::vector<std::string> options;
};

struct QuestionContext {
  int count = 1;
  std::optional<std::string> state;
  std::vector<std::string> states;          ///< the class's two states
  std::vector<std::string> distractor_pool;  ///< classes absent from the support
  bool multiple_choice = false;             ///< existence as 4-way choice
};

[[nodiscard]] inline std::string plural(const std::string& noun) {
  auto ends = [&](std::string_view s) { return noun.size() >= s.size() && noun.compare(noun.size() - s.size(), s.size(), s) == 0; };
  if (ends("s") || ends("x") || ends("ch") || ends("sh")) return noun + "es";
  return noun + "s";
}

[[nodiscard]] inline Question generate_question(QuestionType qtype, const std::string& target_class,
                                                const std::string& support_class, const QuestionContext& ctx,
                                                std::uint64_t seed) {
  Rng rng(seed);
  static constexpr std::string_view kLetters = "ABCD";
  switch (qtype) {
    case QuestionType::existence: {
      if (!ctx.multiple_choice) return {"Is there a " + target_class + " on the " + support_class + "?", "yes", {}};
      std::vector<std::string> pool;
      for (const auto& c : ctx.distractor_pool)
        if (c != target_class && std::find(pool.begin(), pool.end(), c) == pool.end()) pool.push_back(c);
      if (pool.size() < 3) throw DomainError("generate_question: need three distractor classes");
      rng.shuffle(pool);
      std::vector<std::string> options{target_class, pool[0], pool[1], pool[2]};
      rng.shuffle(options);
      std::string text = "Which object is on the " + support_class + "?";
      std::string answer;
      for (std::size_t i = 0; i < options.size(); ++i) {
        text += std::string(" ") + kLetters[i] + ": " + options[i];
        if (options[i] == target_class) answer = std::string(1, kLetters[i]);
      }
      return {text, answer, options};
    }
    case QuestionType::counting: {
      if (ctx.count < 1) throw DomainError("generate_question: count must be positive");
      return {"How many " + plural(target_class) + " are on the " + support_class + "?", std::to_string(ctx.count), {}};
    }
    case QuestionType::state: {
      if (!ctx.state || ctx.states.size() != 2) throw DomainError("generate_question: state question needs a state");
      std::vector<std::string> options = ctx.states;
      if (rng.bernoulli(0.5)) std::swap(options[0], options[1]);
      const std::string answer = options[0] == *ctx.state ? "A" : "B";
      return {"Choose the state of the " + target_class + " on the " + support_class + ". A: " + options[0] +
                  " B: " + options[1],
              answer, options};
    }
  }
  throw DomainError("generate_question: unknown question type");
}

// ---------------------------------------------------------------------------
// Curation

struct CurationConfig {
  std::uint64_t seed = 1;
  int num_scenes = 10;
  int per_scene = 4;
  int attempts_per_sample = 4;  ///< retry budget multiplier per scene
  int max_samples = 0;          ///< stop once this many samples are kept (0 = no cap)
  std::vector<QuestionType> qtypes{QuestionType::existence};
  bool multiple_choice_existence = false;
  CurationThresholds thresholds;  ///< at 512 x 512; scaled to the camera resolution
  CameraConfig camera;
  VerifierConfig verifier;
  GenerationConfig generation;
  ViewSampling sampling;
  std::string catalog_path = default_catalog_path();
  unsigned threads = 1;
};

struct CurationStats {
  int scenes = 0;
  int attempts = 0;
  int kept = 0;
  int dropped_verifier = 0;
  int skipped_no_pair = 0;
  int skipped_modification = 0;
  int skipped_target_view = 0;
  int skipped_query_view = 0;
  int generation_failures = 0;
  std::map<std::string, int> kept_by_type;
};

inline void to_json(nlohmann::json& j, const CurationStats& s) {
  j = {{"scenes", s.scenes}, {"attempts", s.attempts}, {"kept", s.kept}, {"dropped_verifier", s.dropped_verifier},
       {"skipped_no_pair", s.skipped_no_pair}, {"skipped_modification", s.skipped_modification},
       {"skipped_target_view", s.skipped_target_view}, {"skipped_query_view", s.skipped_query_view},
       {"generation_failures", s.generation_failures}, {"kept_by_type", s.kept_by_type}};
}

inline void to_json(nlohmann::json& j, const GenerationConfig& g) {
  j = {{"room_side", {g.room_side.lo, g.room_side.hi}}, {"wall_height", g.wall_height},
       {"supports", {g.min_supports, g.max_supports}},
       {"targets_per_support", {g.min_targets_per_support, g.max_targets_per_support}},
       {"floor_objects", {g.min_floor_objects, g.max_floor_objects}}, {"wall_clearance", g.wall_clearance},
       {"furniture_clearance", g.furniture_clearance}, {"surface_gap", g.surface_gap},
       {"center_band", g.center_band}, {"max_retries", g.max_retries}};
}

[[nodiscard]] inline nlohmann::json catalog_to_json(const ClassCatalog& catalog) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : catalog.classes()) {
    nlohmann::json e;
    e["name"] = c.name;
    e["placement"] = c.placement == Placement::floor_support ? "support"
                     : c.placement == Placement::surface     ? "surface"
                                                             : "floor";
    e["width"] = {c.width.lo, c.width.hi};
    e["depth"] = {c.depth.lo, c.depth.hi};
    e["height"] = {c.height.lo, c.height.hi};
    if (c.has_states()) e["states"] = c.states;
    classes.push_back(std::move(e));
  }
  return {{"classes", classes}};
}

namespace detail {

struct CuratedSample {
  SampleRecord record;
  InstanceImage qry;
  InstanceImage tgt;
};

struct SceneResult {
  std::vector<Scene> scenes;  ///< base scene first, then modified variants in use
  std::vector<CuratedSample> samples;
  CurationStats stats;
};

[[nodiscard]] inline std::string zero_pad(long v, int width) {
  std::string s = std::to_string(v);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

[[nodiscard]] inline SceneResult curate_scene(int scene_index, const CurationConfig& cfg, const ClassCatalog& catalog,
                                              const CurationThresholds& thr) {
  SceneResult out;
  const std::uint64_t scene_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(scene_index));
  Scene base;
  try {
    base = generate_scene(scene_seed, cfg.generation, catalog);
  } catch (const GenerationError&) {
    ++out.stats.generation_failures;
    return out;
  }
  base.scene_id = "scene_" + zero_pad(scene_index, 5);
  ++out.stats.scenes;
  bool base_used = false;

  RolloutConfig rollout{cfg.camera, cfg.verifier, RewardWeights{}, cfg.sampling.agent_radius};
  const int budget = cfg.per_scene * cfg.attempts_per_sample;
  const auto pairs = support_target_pairs(base);
  for (int attempt = 0; attempt < budget && static_cast<int>(out.samples.size()) < cfg.per_scene; ++attempt) {
    ++out.stats.attempts;
    const std::uint64_t attempt_seed = derive_seed(scene_seed, 1000 + static_cast<std::uint64_t>(attempt));
    Rng rng(attempt_seed);
    const QuestionType qtype = cfg.qtypes[static_cast<std::size_t>(attempt) % cfg.qtypes.size()];

    std::vector<std::pair<int, int>> eligible;
    for (const auto& p : pairs)
      if (qtype != QuestionType::state || catalog.at(base.at(p.second).class_name).has_states()) eligible.push_back(p);
    if (eligible.empty()) {
      ++out.stats.skipped_no_pair;
      continue;
    }
    const auto pair = eligible[rng.index(eligible.size())];

    ModifiedScene mod;
    try {
      mod = modify_for_question_type(base, pair, qtype, derive_seed(attempt_seed, 1), catalog,
                                     cfg.generation.max_retries, cfg.generation.surface_gap);
    } catch (const SampleSkip&) {
      ++out.stats.skipped_modification;
      continue;
    }
    if (qtype != QuestionType::existence) mod.scene.scene_id = base.scene_id + "_m" + zero_pad(attempt, 2);
    const Scene& scene = mod.scene;

    AgentState s_tgt;
    try {
      s_tgt = sample_target_view(scene, pair.first, mod.target_ids, thr, cfg.camera, derive_seed(attempt_seed, 2),
                                 cfg.sampling);
    } catch (const SampleSkip&) {
      ++out.stats.skipped_target_view;
      continue;
    }
    QueryView qv;
    try {
      qv = sample_query_view(scene, s_tgt, mod.target_ids, pair.first, thr, cfg.camera, derive_seed(attempt_seed, 3),
                             cfg.sampling);
    } catch (const SampleSkip&) {
      ++out.stats.skipped_query_view;
      continue;
    }

    const ObjectInstance& target = scene.at(pair.second);
    const ObjectInstance& support = scene.at(pair.first);
    QuestionContext ctx;
    ctx.count = mod.count;
    ctx.state = target.state;
    if (const ClassSpec* spec = catalog.find(target.class_name)) ctx.states = spec->states;
    ctx.multiple_choice = cfg.multiple_choice_existence;
    for (const auto* c : catalog.with_placement(Placement::surface)) {
      const auto children = scene.children_of(pair.first);
      const bool present = std::any_of(children.begin(), children.end(),
                                       [&](const ObjectInstance* o) { return o->class_name == c->name; });
      if (!present) ctx.distractor_pool.push_back(c->name);
    }
    Question q;
    try {
      q = generate_question(qtype, target.class_name, support.class_name, ctx, derive_seed(attempt_seed, 4));
    } catch (const DomainError&) {
      ++out.stats.skipped_no_pair;
      continue;
    }

    SampleRecord rec;
    rec.sample_id = base.scene_id + "_" + zero_pad(static_cast<long>(out.samples.size()), 2);
    rec.scene_id = scene.scene_id;
    rec.question = q.text;
    rec.answer = q.answer;
    rec.question_type = qtype;
    rec.options = q.options;
    rec.target_class = target.class_name;
    rec.support_class = support.class_name;
    rec.target_ids = mod.target_ids;
    rec.support_id = pair.first;
    rec.s_tgt = s_tgt;
    rec.s_qry = qv.s_qry;
    rec.a_tgt = qv.a_tgt;
    rec.view_tgt = "views/" + rec.sample_id + "_tgt.pgm";
    rec.view_qry = "views/" + rec.sample_id + "_qry.pgm";
    rec.thresholds = thr;
    rec.rng_seed = attempt_seed;

    InstanceImage tgt = render_instance(scene, s_tgt, cfg.camera);
    // Stage 3: keep only samples the verifier answers from the target view,
    // and for which executing the encoded ground-truth action does too.
    if (oracle_verify(tgt, rec, cfg.verifier) != 1 ||
        verifiable_reward(scene, rec, format_action(rec.a_tgt), rollout).verifier != 1) {
      ++out.stats.dropped_verifier;
      continue;
    }
    InstanceImage qry = render_instance(scene, qv.s_qry, cfg.camera);

    if (qtype == QuestionType::existence) base_used = true;
    else out.scenes.push_back(scene);
    ++out.stats.kept;
    ++out.stats.kept_by_type[to_string(qtype)];
    out.samples.push_back({std::move(rec), std::move(qry), std::move(tgt)});
  }
  if (base_used) out.scenes.insert(out.scenes.begin(), base);
  return out;
}

inline void accumulate(CurationStats& into, const CurationStats& s) {
  into.scenes += s.scenes;
  into.attempts += s.attempts;
  into.kept += s.kept;
  into.dropped_verifier += s.dropped_verifier;
  into.skipped_no_pair += s.skipped_no_pair;
  into.skipped_modification += s.skipped_modification;
  into.skipped_target_view += s.skipped_target_view;
  into.skipped_query_view += s.skipped_query_view;
  into.generation_failures += s.generation_failures;
  for (const auto& [k, v] : s.kept_by_type) into.kept_by_type[k] += v;
}

/// Keeps the first `keep` samples of a scene and the scenes they use.
inline void truncate_scene_result(SceneResult& r, std::size_t keep) {
  if (r.samples.size() <= keep) return;
  r.samples.resize(keep);
  std::set<std::string> used;
  r.stats.kept = static_cast<int>(keep);
  r.stats.kept_by_type.clear();
  for (const auto& cs : r.samples) {
    used.insert(cs.record.scene_id);
    ++r.stats.kept_by_type[to_string(cs.record.question_type)];
  }
  std::erase_if(r.scenes, [&](const Scene& sc) { return !used.count(sc.scene_id); });
}

inline void write_json_file(const fs::path& path, const nlohmann::json& j) { write_file(path.string(), j.dump(2) + "\n"); }

}  // namespace detail

struct CurationResult {
  CurationStats stats;
  std::vector<std::string> warnings;
};

/// Runs the full pipeline and writes the dataset into `out_dir`.
/// Output bytes depend only on the configuration, not on `threads`.
inline CurationResult curate_dataset(const CurationConfig& cfg, const fs::path& out_dir) {
  if (cfg.num_scenes < 1 || cfg.per_scene < 1 || cfg.attempts_per_sample < 1 || cfg.max_samples < 0)
    throw DomainError("curate: counts must be positive");
  if (cfg.qtypes.empty()) throw DomainError("curate: no question types");
  cfg.camera.validate();
  cfg.thresholds.validate();
  cfg.verifier.validate(cfg.camera.pixels());
  const ClassCatalog catalog = ClassCatalog::load(cfg.catalog_path);
  const CurationThresholds thr = cfg.thresholds.scaled(cfg.camera.pixels());

  CurationResult result;
  if (auto w = cfg.thresholds.ordering_warning()) result.warnings.push_back(*w);

  std::error_code ec;
  fs::create_directories(out_dir / "scenes", ec);
  fs::create_directories(out_dir / "views", ec);
  if (ec) throw IoError("curate: cannot create " + out_dir.string() + ": " + ec.message());

  std::ofstream samples(out_dir / "samples.jsonl", std::ios::binary | std::ios::trunc);
  if (!samples) throw IoError("curate: cannot write samples.jsonl");

  const unsigned threads = std::max(1u, cfg.threads);
  auto full = [&] { return cfg.max_samples > 0 && result.stats.kept >= cfg.max_samples; };
  for (int chunk = 0; chunk < cfg.num_scenes && !full(); chunk += static_cast<int>(threads)) {
    const int n = std::min(static_cast<int>(threads), cfg.num_scenes - chunk);
    std::vector<detail::SceneResult> results(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), threads,
                 [&](std::size_t i) { results[i] = detail::curate_scene(chunk + static_cast<int>(i), cfg, catalog, thr); });
    for (auto& r : results) {
      if (full()) break;
      if (cfg.max_samples > 0) detail::truncate_scene_result(r, static_cast<std::size_t>(cfg.max_samples - result.stats.kept));
      detail::accumulate(result.stats, r.stats);
      for (const auto& s : r.scenes) detail::write_json_file(out_dir / "scenes" / (s.scene_id + ".json"), s);
      for (const auto& cs : r.samples) {
        write_file((out_dir / cs.record.view_qry).string(), encode_pgm(cs.qry));
        write_file((out_dir / cs.record.view_tgt).string(), encode_pgm(cs.tgt));
        auto preview = [](std::string p) { return p.substr(0, p.size() - 4) + ".ppm"; };
        write_file((out_dir / preview(cs.record.view_qry)).string(), encode_ppm_preview(cs.qry));
        write_file((out_dir / preview(cs.record.view_tgt)).string(), encode_ppm_preview(cs.tgt));
        samples << nlohmann::json(cs.record).dump() << '\n';
      }
    }
  }
  samples.close();
  if (!samples) throw IoError("curate: failed writing samples.jsonl");

  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["seed"] = cfg.seed;
  manifest["num_scenes"] = cfg.num_scenes;
  manifest["per_scene"] = cfg.per_scene;
  manifest["attempts_per_sample"] = cfg.attempts_per_sample;
  manifest["max_samples"] = cfg.max_samples;
  std::vector<std::string> qtypes;
  for (const auto q : cfg.qtypes) qtypes.push_back(to_string(q));
  manifest["qtypes"] = qtypes;
  manifest["multiple_choice_existence"] = cfg.multiple_choice_existence;
  manifest["camera"] = cfg.camera;
  manifest["thresholds"] = cfg.thresholds;
  manifest["effective_thresholds"] = thr;
  manifest["centroid_normalization"] = "half_image_diagonal";
  manifest["verifier"] = cfg.verifier;
  manifest["generation"] = cfg.generation;
  manifest["sampling"] = cfg.sampling;
  manifest["catalog"] = catalog_to_json(catalog);
  manifest["stats"] = result.stats;
  manifest["warnings"] = result.warnings;
  detail::write_json_file(out_dir / "manifest.json", manifest);

  if (result.stats.kept == 0) throw CurationError("curate: no samples survived curation");
  return result;
}

// ---------------------------------------------------------------------------
// Loading and validation

struct Dataset {
  fs::path root;
  nlohmann::json manifest;
  CameraConfig camera;
  CurationThresholds thresholds;  ///< effective
  VerifierConfig verifier;
  double agent_radius = kDefaultAgentRadius;
  std::vector<SampleRecord> records;
  std::map<std::string, Scene> scenes;

  [[nodiscard]] const Scene& scene_for(const SampleRecord& r) const {
    const auto it = scenes.find(r.scene_id);
    if (it == scenes.end()) throw IoError("dataset: missing scene " + r.scene_id);
    return it->second;
  }
  [[nodiscard]] InstanceImage load_view(const std::string& rel) const { return decode_pgm(read_file((root / rel).string())); }
  [[nodiscard]] RolloutConfig rollout_config(const RewardWeights& w = {}) const { return {camera, verifier, w, agent_radius}; }
  [[nodiscard]] std::optional<std::size_t> index_of(const std::string& sample_id) const {
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].sample_id == sample_id) return i;
    return std::nullopt;
  }
};

[[nodiscard]] inline nlohmann::json read_json_file(const fs::path& path) {
  const std::string text = read_file(path.string());
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

/// Loads manifest, samples and scenes. Throws IoError on any unreadable or
/// malformed file; use validate_dataset for an itemized report instead.
[[nodiscard]] inline Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.root = dir;
  if (!fs::is_directory(dir)) throw IoError("dataset: not a directory: " + dir.string());
  ds.manifest = read_json_file(dir / "manifest.json");
  try {
    ds.camera = ds.manifest.at("camera").get<CameraConfig>();
    ds.thresholds = ds.manifest.at("effective_thresholds").get<CurationThresholds>();
    ds.verifier = ds.manifest.at("verifier").get<VerifierConfig>();
    ds.agent_radius = ds.manifest.at("sampling").value("agent_radius", kDefaultAgentRadius);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("dataset: manifest missing fields: ") + e.what());
  }
  std::ifstream in(dir / "samples.jsonl");
  if (!in) throw IoError("dataset: missing samples.jsonl");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      ds.records.push_back(nlohmann::json::parse(line).get<SampleRecord>());
    } catch (const std::exception& e) {
      throw IoError("dataset: samples.jsonl line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  for (const auto& r : ds.records) {
    if (ds.scenes.count(r.scene_id)) continue;
    ds.scenes.emplace(r.scene_id, read_json_file(dir / "scenes" / (r.scene_id + ".json")).get<Scene>());
  }
  return ds;
}

struct Violation {
  std::string sample_id;
  std::string check;
  std::string detail;
};

struct ValidationReport {
  std::size_t samples_checked = 0;
  std::vector<Violation> violations;
  [[nodiscard]] bool ok() const noexcept { return violations.empty(); }
};

inline void to_json(nlohmann::json& j, const ValidationReport& r) {
  nlohmann::json v = nlohmann::json::array();
  for (const auto& x : r.violations) v.push_back({{"sample_id", x.sample_id}, {"check", x.check}, {"detail", x.detail}});
  j = {{"samples_checked", r.samples_checked}, {"violation_count", r.violations.size()}, {"violations", v}};
}

inline constexpr double kRoundTripPositionTol = 1e-6;  ///< cm
inline constexpr double kRoundTripAngleTol = 1e-6;     ///< degrees

/// Re-renders every stored pose and re-checks both view rules, the action
/// round trip, collision freedom and verifier answerability. Problems are
/// itemized, never thrown.
[[nodiscard]] inline ValidationReport validate_dataset(const fs::path& dir) {
  ValidationReport report;
  auto flag = [&](const std::string& id, const std::string& check, const std::string& detail) {
    report.violations.push_back({id, check, detail});
  };

  nlohmann::json manifest;
  try {
    manifest = read_json_file(dir / "manifest.json");
  } catch (const std::exception& e) {
    flag("", "manifest", e.what());
    return report;
  }
  CameraConfig cam;
  CurationThresholds thr;
  VerifierConfig vcfg;
  double radius = kDefaultAgentRadius;
  std::optional<ClassCatalog> catalog;
  try {
    cam = manifest.at("camera").get<CameraConfig>();
    cam.validate();
    thr = manifest.at("thresholds").get<CurationThresholds>().scaled(cam.pixels());
    vcfg = manifest.at("verifier").get<VerifierConfig>();
    radius = manifest.at("sampling").value("agent_radius", kDefaultAgentRadius);
    if (manifest.contains("catalog")) catalog = ClassCatalog::from_json(manifest.at("catalog"));
  } catch (const std::exception& e) {
    flag("", "manifest", e.what());
    return report;
  }
  const RolloutConfig rollout{cam, vcfg, RewardWeights{}, radius};

  std::ifstream in(dir / "samples.jsonl");
  if (!in) {
    flag("", "samples", "missing samples.jsonl");
    return report;
  }
  std::map<std::string, std::optional<Scene>> scene_cache;
  std::set<std::string> seen_ids;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ++report.samples_checked;
    SampleRecord rec;
    try {
      rec = nlohmann::json::parse(line).get<SampleRecord>();
    } catch (const std::exception& e) {
      flag("line " + std::to_string(lineno), "parse", e.what());
      continue;
    }
    const std::string& id = rec.sample_id;
    if (!seen_ids.insert(id).second) flag(id, "unique_id", "duplicate sample id");
    if (!is_valid(rec.s_qry) || !is_valid(rec.s_tgt) || !is_valid(rec.a_tgt)) {
      flag(id, "pose_domain", "invalid pose or action values");
      continue;
    }

    auto& cached = scene_cache[rec.scene_id];
    if (!cached) {
      try {
        cached = read_json_file(dir / "scenes" / (rec.scene_id + ".json")).get<Scene>();
        for (const auto& msg : validate_scene(*cached, catalog ? &*catalog : nullptr)) flag(id, "scene", msg);
      } catch (const std::exception& e) {
        flag(id, "scene", e.what());
        continue;
      }
    }
    const Scene& scene = *cached;

    bool refs_ok = scene.find(rec.support_id) != nullptr && scene.at(rec.support_id).is_supporting && !rec.target_ids.empty();
    for (const int t : rec.target_ids) {
      const auto* o = scene.find(t);
      refs_ok = refs_ok && o != nullptr && o->supported_by == rec.support_id;
    }
    if (!refs_ok) {
      flag(id, "references", "target/support ids inconsistent with scene");
      continue;
    }

    const AgentState reached = transition(rec.s_qry, rec.a_tgt);
    if (position_error(reached, rec.s_tgt) > kRoundTripPositionTol || azimuth_error(reached, rec.s_tgt) > kRoundTripAngleTol)
      flag(id, "round_trip", "transition(s_qry, a_tgt) does not reach s_tgt");
    if (!collision_free(scene, rec.s_tgt, radius)) flag(id, "collision", "target pose collides");
    if (!path_collision_free(scene, rec.s_qry, rec.s_tgt, radius)) flag(id, "collision", "query-to-target path collides");

    const InstanceImage tgt = render_instance(scene, rec.s_tgt, cam);
    const InstanceImage qry = render_instance(scene, rec.s_qry, cam);
    if (!detail::is_target_view(tgt, rec.target_ids, thr)) flag(id, "eq1_target_view", "target view rule violated");
    if (!detail::is_query_view(qry, rec.target_ids, rec.support_id, thr)) flag(id, "eq2_query_view", "query view rule violated");
    if (oracle_verify(tgt, rec, vcfg) != 1) flag(id, "verifier_target", "verifier fails on the target view");
    if (oracle_verify(qry, rec, vcfg) != 0) flag(id, "verifier_query", "verifier succeeds on the query view");
    if (verifiable_reward(scene, rec, format_action(rec.a_tgt), rollout).verifier != 1)
      flag(id, "verifier_action", "encoded ground-truth action does not yield an answerable view");

    for (const auto& [rel, expect, name] : {std::tuple{rec.view_tgt, &tgt, "stored_view_tgt"},
                                            std::tuple{rec.view_qry, &qry, "stored_view_qry"}}) {
      try {
        if (decode_pgm(read_file((dir / rel).string())) != *expect) flag(id, name, "stored view differs from re-render");
      } catch (const std::exception& e) {
        flag(id, name, e.what());
      }
    }
  }
  if (report.samples_checked == 0) flag("", "samples", "dataset contains no samples");
  return report;
}

}  // namespace avs
