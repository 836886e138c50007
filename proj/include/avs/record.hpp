#pragma once
/**
 * @file record.hpp
 * @brief Curation thresholds and the per-sample record shared by curation,
 *        rewards, evaluation and the server.
 */

#include <avs/error.hpp>
#include <avs/geometry.hpp>
#include <avs/scene.hpp>

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace avs {

/// Pixel thresholds are quoted for a 512 x 512 image.
inline constexpr double kReferencePixels = 512.0 * 512.0;

[[nodiscard]] inline double resolution_scale(long pixels) noexcept { return static_cast<double>(pixels) / kReferencePixels; }

struct CurationThresholds {
  double eps_vis_sup = 5000.0;   ///< support must exceed this in the query view
  double eps_vis_obj = 10000.0;  ///< target must exceed this in the target view
  double eps_inv_obj = 30.0;     ///< every target must stay below this in the query view
  double delta_center = 0.25;    ///< target centroid distance bound in the target view

  /// Pixel thresholds rescaled to an image with `pixels` pixels.
  [[nodiscard]] CurationThresholds scaled(long pixels) const noexcept {
    const double k = resolution_scale(pixels);
    return {eps_vis_sup * k, eps_vis_obj * k, eps_inv_obj * k, delta_center};
  }

  void validate() const {
    if (!(eps_vis_sup > 0 && eps_vis_obj > 0 && eps_inv_obj > 0)) throw DomainError("thresholds must be positive");
    if (!(delta_center > 0 && delta_center <= 1)) throw DomainError("delta_center must lie in (0, 1]");
    if (!(eps_inv_obj < eps_vis_obj)) throw DomainError("eps_inv_obj must be below eps_vis_obj");
  }

  /// The default support threshold sits below the object threshold; reported, not rejected.
  [[nodiscard]] std::optional<std::string> ordering_warning() const {
    if (eps_vis_sup <= eps_vis_obj)
      return "eps_vis_sup (" + std::to_string(eps_vis_sup) + ") <= eps_vis_obj (" + std::to_string(eps_vis_obj) +
             "): support threshold is not the largest";
    return std::nullopt;
  }

  friend bool operator==(const CurationThresholds&, const CurationThresholds&) = default;
};

struct SampleRecord {
  std::string sample_id;
  std::string scene_id;
  std::string question;
  std::string answer;
  QuestionType question_type = QuestionType::existence;
  std::vector<std::string> options;  ///< multiple-choice options, empty for free-form
  std::string target_class;
  std::string support_class;
  std::vector<int> target_ids;
  int support_id = 0;
  AgentState s_tgt;
  AgentState s_qry;
  Action a_tgt;
  std::string view_tgt;  ///< path relative to the dataset root
  std::string view_qry;
  CurationThresholds thresholds;  ///< effective (resolution-scaled) values
  std::uint64_t rng_seed = 0;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

inline void to_json(nlohmann::json& j, const AgentState& s) { j = {{"x", s.x}, {"y", s.y}, {"azimuth", s.azimuth}}; }
inline void from_json(const nlohmann::json& j, AgentState& s) {
  s = {j.at("x").get<double>(), j.at("y").get<double>(), j.at("azimuth").get<double>()};
}
inline void to_json(nlohmann::json& j, const Action& a) {
  j = {{"heading", a.heading}, {"distance", a.distance}, {"view", a.view}};
}
inline void from_json(const nlohmann::json& j, Action& a) {
  a = {j.at("heading").get<double>(), j.at("distance").get<double>(), j.at("view").get<double>()};
}
inline void to_json(nlohmann::json& j, const CurationThresholds& t) {
  j = {{"eps_vis_sup", t.eps_vis_sup}, {"eps_vis_obj", t.eps_vis_obj}, {"eps_inv_obj", t.eps_inv_obj},
       {"delta_center", t.delta_center}};
}
inline void from_json(const nlohmann::json& j, CurationThresholds& t) {
  t = {j.at("eps_vis_sup").get<double>(), j.at("eps_vis_obj").get<double>(), j.at("eps_inv_obj").get<double>(),
       j.at("delta_center").get<double>()};
}

inline void to_json(nlohmann::json& j, const SampleRecord& r) {
  j = nlohmann::json::object();
  j["sample_id"] = r.sample_id;
  j["scene_id"] = r.scene_id;
  j["question"] = r.question;
  j["answer"] = r.answer;
  j["question_type"] = to_string(r.question_type);
  j["options"] = r.options;
  j["target_class"] = r.target_class;
  j["support_class"] = r.support_class;
  j["target_ids"] = r.target_ids;
  j["support_id"] = r.support_id;
  j["s_tgt"] = r.s_tgt;
  j["s_qry"] = r.s_qry;
  j["a_tgt"] = r.a_tgt;
  j["view_tgt"] = r.view_tgt;
  j["view_qry"] = r.view_qry;
  j["thresholds"] = r.thresholds;
  j["rng_seed"] = r.rng_seed;
}
inline void from_json(const nlohmann::json& j, SampleRecord& r) {
  r.sample_id = j.at("sample_id").get<std::string>();
  r.scene_id = j.at("scene_id").get<std::string>();
  r.question = j.at("question").get<std::string>();
  r.answer = j.at("answer").get<std::string>();
  r.question_type = parse_question_type(j.at("question_type").get<std::string>());
  r.options = j.at("options").get<std::vector<std::string>>();
  r.target_class = j.at("target_class").get<std::string>();
  r.support_class = j.at("support_class").get<std::string>();
  r.target_ids = j.at("target_ids").get<std::vector<int>>();
  r.support_id = j.at("support_id").get<int>();
  r.s_tgt = j.at("s_tgt").get<AgentState>();
  r.s_qry = j.at("s_qry").get<AgentState>();
  r.a_tgt = j.at("a_tgt").get<Action>();
  r.view_tgt = j.at("view_tgt").get<std::string>();
  r.view_qry = j.at("view_qry").get<std::string>();
  r.thresholds = j.at("thresholds").get<CurationThresholds>();
  r.rng_seed = j.at("rng_seed").get<std::uint64_t>();
}

}  // namespace avs
