#pragma once
/**
 * @file reward.hpp
 * @brief Tag-delimited action strings, the format reward, the mask-based
 *        answer oracle, and the combined rollout reward.
 *
 * Two tag dialects are understood: `<H>..</H><D>..</D><V>..</V>` (emitted by
 * default) and `<head>..</head><fwd>..</fwd><view>..</view>`.
 */

#include <avs/geometry.hpp>
#include <avs/record.hpp>
#include <avs/render.hpp>
#include <avs/scene.hpp>

#include <json.hpp>

#include <array>
#include <charconv>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

namespace avs {

enum class Dialect { main, prompt };

struct ActionText {
  std::string raw;
  std::optional<Action> parsed;
  Dialect dialect = Dialect::main;
  bool had_think_block = false;
};

namespace detail {

struct TagSet {
  std::string_view heading, distance, view;
};

inline constexpr std::array<TagSet, 2> kDialects{{{"H", "D", "V"}, {"head", "fwd", "view"}}};

[[nodiscard]] inline const TagSet& tags(Dialect d) { return kDialects[d == Dialect::main ? 0 : 1]; }

[[nodiscard]] inline long long round_component(double v) { return std::llround(v); }

/// Matches `<tag>content</tag>` at `pos`; content may not contain '<'.
[[nodiscard]] inline bool match_element(std::string_view text, std::size_t& pos, std::string_view tag,
                                        std::string_view& content) {
  const std::string open = "<" + std::string(tag) + ">";
  const std::string close = "</" + std::string(tag) + ">";
  if (text.compare(pos, open.size(), open) != 0) return false;
  const std::size_t begin = pos + open.size();
  const std::size_t end = text.find('<', begin);
  if (end == std::string_view::npos || text.compare(end, close.size(), close) != 0) return false;
  content = text.substr(begin, end - begin);
  pos = end + close.size();
  return true;
}

inline void skip_ws(std::string_view text, std::size_t& pos) {
  while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
}

[[nodiscard]] inline std::optional<long long> parse_integer(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  if (s.empty() || s.size() > 12) return std::nullopt;
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

struct Triple {
  std::string_view heading, distance, view;
  Dialect dialect;
};

[[nodiscard]] inline std::optional<Triple> match_triple(std::string_view text, std::size_t pos, Dialect d) {
  const TagSet& t = tags(d);
  Triple out{{}, {}, {}, d};
  if (!match_element(text, pos, t.heading, out.heading)) return std::nullopt;
  skip_ws(text, pos);
  if (!match_element(text, pos, t.distance, out.distance)) return std::nullopt;
  skip_ws(text, pos);
  if (!match_element(text, pos, t.view, out.view)) return std::nullopt;
  return out;
}

}  // namespace detail

/// Rounds each component to the nearest integer and emits the tags in
/// heading, distance, view order.
[[nodiscard]] inline std::string format_action(const Action& a, Dialect dialect = Dialect::main) {
  require_valid(a, "format_action");
  const auto h = detail::round_component(normalize_angle(static_cast<double>(detail::round_component(a.heading))));
  const auto d = detail::round_component(a.distance);
  const auto v = detail::round_component(normalize_angle(static_cast<double>(detail::round_component(a.view))));
  const auto& t = detail::tags(dialect);
  auto element = [](std::string_view tag, long long value) {
    return "<" + std::string(tag) + ">" + std::to_string(value) + "</" + std::string(tag) + ">";
  };
  return element(t.heading, h) + element(t.distance, d) + element(t.view, v);
}

/// Parses the last complete tag triple in `text`.
///
/// Heading and view must be integers in (-180, 180] and distance a
/// non-negative integer; if the last triple breaks these rules nothing is
/// parsed, even when an earlier triple was valid.
[[nodiscard]] inline ActionText parse_action(std::string_view text) {
  ActionText out;
  out.raw = std::string(text);
  const std::size_t think_open = text.find("<think>");
  out.had_think_block = think_open != std::string_view::npos && text.find("</think>", think_open) != std::string_view::npos;

  std::optional<detail::Triple> last;
  for (std::size_t pos = text.find('<'); pos != std::string_view::npos; pos = text.find('<', pos + 1)) {
    for (const Dialect d : {Dialect::main, Dialect::prompt})
      if (auto t = detail::match_triple(text, pos, d)) last = t;
  }
  if (!last) return out;
  out.dialect = last->dialect;
  const auto h = detail::parse_integer(last->heading);
  const auto d = detail::parse_integer(last->distance);
  const auto v = detail::parse_integer(last->view);
  if (!h || !d || !v) return out;
  const Action a{static_cast<double>(*h), static_cast<double>(*d), static_cast<double>(*v)};
  if (is_valid(a)) out.parsed = a;
  return out;
}

[[nodiscard]] inline int format_reward(std::string_view text) { return parse_action(text).parsed ? 1 : 0; }

// ---------------------------------------------------------------------------
// Verifier

struct VerifierConfig {
  double tau_ans = 2500.0;  ///< pixels at 512 x 512; rescaled with the image
  bool centering_required = false;
  double delta_center = 0.25;

  [[nodiscard]] double tau_for(long pixels) const noexcept { return tau_ans * resolution_scale(pixels); }

  void validate(long pixels) const {
    const double t = tau_for(pixels);
    if (!(t > 0 && t <= static_cast<double>(pixels))) throw DomainError("verifier: tau_ans out of range");
  }
};

inline void to_json(nlohmann::json& j, const VerifierConfig& v) {
  j = {{"tau_ans", v.tau_ans}, {"centering_required", v.centering_required}, {"delta_center", v.delta_center}};
}
inline void from_json(const nlohmann::json& j, VerifierConfig& v) {
  v.tau_ans = j.at("tau_ans").get<double>();
  v.centering_required = j.at("centering_required").get<bool>();
  v.delta_center = j.value("delta_center", 0.25);
}

/// Answerability oracle: every instance the question refers to must cover at
/// least tau_ans pixels. For counting this means each placed copy, otherwise
/// the count cannot be read off the view.
[[nodiscard]] inline int oracle_verify(const InstanceImage& img, const SampleRecord& record, const VerifierConfig& vcfg) {
  if (record.target_ids.empty()) return 0;
  const double tau = vcfg.tau_for(img.pixels());
  const auto counts = visible_instances(img);
  for (const int id : record.target_ids) {
    const auto it = counts.find(id);
    if (it == counts.end() || static_cast<double>(it->second) < tau) return 0;
  }
  if (vcfg.centering_required && !(centroid_distance(img, std::span<const int>(record.target_ids)) < vcfg.delta_center))
    return 0;
  return 1;
}

// ---------------------------------------------------------------------------
// Rewards

struct RewardWeights {
  double format = 0.3;
  double verifier = 1.0;
  double pose = 0.0;
  bool pose_enabled = false;
  double sigma_pos = 50.0;  ///< cm
  double sigma_ang = 30.0;  ///< degrees
};

inline void to_json(nlohmann::json& j, const RewardWeights& w) {
  j = {{"format", w.format}, {"verifier", w.verifier}, {"pose", w.pose}, {"pose_enabled", w.pose_enabled},
       {"sigma_pos", w.sigma_pos}, {"sigma_ang", w.sigma_ang}};
}
inline void from_json(const nlohmann::json& j, RewardWeights& w) {
  w.format = j.at("format").get<double>();
  w.verifier = j.at("verifier").get<double>();
  w.pose = j.value("pose", 0.0);
  w.pose_enabled = j.value("pose_enabled", false);
  w.sigma_pos = j.value("sigma_pos", 50.0);
  w.sigma_ang = j.value("sigma_ang", 30.0);
}

struct RewardBreakdown {
  int format = 0;
  int verifier = 0;
  std::optional<double> pose;
  double total = 0.0;

  friend bool operator==(const RewardBreakdown&, const RewardBreakdown&) = default;
};

inline void to_json(nlohmann::json& j, const RewardBreakdown& r) {
  j = {{"format", r.format}, {"verifier", r.verifier}, {"pose", r.pose ? nlohmann::json(*r.pose) : nlohmann::json(nullptr)},
       {"total", r.total}};
}
inline void from_json(const nlohmann::json& j, RewardBreakdown& r) {
  r.format = j.at("format").get<int>();
  r.verifier = j.at("verifier").get<int>();
  r.pose = j.at("pose").is_null() ? std::nullopt : std::optional<double>(j.at("pose").get<double>());
  r.total = j.at("total").get<double>();
}

/// exp(-position error / sigma_pos) * exp(-azimuth error / sigma_ang).
[[nodiscard]] inline double pose_reward(const AgentState& pred, const AgentState& target, double sigma_pos = 50.0,
                                        double sigma_ang = 30.0) {
  return std::exp(-position_error(pred, target) / sigma_pos) * std::exp(-azimuth_error(pred, target) / sigma_ang);
}

[[nodiscard]] inline RewardBreakdown combine(int format, int verifier, std::optional<double> pose, const RewardWeights& w) {
  RewardBreakdown r{format, verifier, std::nullopt, w.format * format + w.verifier * verifier};
  if (w.pose_enabled) {
    r.pose = pose.value_or(0.0);
    r.total += w.pose * *r.pose;
  }
  return r;
}

/// Everything observable about executing one action string.
struct Rollout {
  ActionText action;
  AgentState final_state;  ///< start state when the action was not executed
  bool executed = false;   ///< parsed and collision-free
  bool collided = false;
  std::optional<InstanceImage> view;  ///< rendered only when executed
  RewardBreakdown reward;
};

struct RolloutConfig {
  CameraConfig camera;
  VerifierConfig verifier;
  RewardWeights weights;
  double agent_radius = kDefaultAgentRadius;
};

/// Parses `text`, executes it from `start` and scores the resulting view.
/// Unparsable text and colliding motion never reach the renderer.
[[nodiscard]] inline Rollout execute_action(const Scene& scene, const SampleRecord& record, const AgentState& start,
                                            std::string_view text, const RolloutConfig& cfg) {
  Rollout out;
  out.action = parse_action(text);
  out.final_state = start;
  if (!out.action.parsed) {
    out.reward = combine(0, 0, std::nullopt, cfg.weights);
    return out;
  }
  const AgentState next = transition(start, *out.action.parsed);
  if (!path_collision_free(scene, start, next, cfg.agent_radius)) {
    out.collided = true;
    out.reward = combine(1, 0, std::nullopt, cfg.weights);
    return out;
  }
  out.executed = true;
  out.final_state = next;
  out.view = render_instance(scene, next, cfg.camera);
  const int ver = oracle_verify(*out.view, record, cfg.verifier);
  out.reward = combine(1, ver, pose_reward(next, record.s_tgt, cfg.weights.sigma_pos, cfg.weights.sigma_ang), cfg.weights);
  return out;
}

/// Single-step reward from the record's query pose.
[[nodiscard]] inline RewardBreakdown verifiable_reward(const Scene& scene, const SampleRecord& record,
                                                       std::string_view action_text, const RolloutConfig& cfg) {
  return execute_action(scene, record, record.s_qry, action_text, cfg).reward;
}

}  // namespace avs
