#pragma once
/**
 * @file eval.hpp
 * @brief Offline evaluation: execute predicted actions from each query view,
 *        score the resulting view with the oracle verifier, and aggregate per
 *        question type next to the no-action query/target baselines.
 */

#include <avs/curate.hpp>
#include <avs/policy.hpp>
#include <avs/record.hpp>
#include <avs/reward.hpp>

#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace avs {

struct EvalMode {
  int max_turns = 1;
  bool multi = false;

  [[nodiscard]] std::string label() const { return multi ? "multi:" + std::to_string(max_turns) : "single"; }
  friend bool operator==(const EvalMode&, const EvalMode&) = default;
};

[[nodiscard]] inline EvalMode parse_eval_mode(const std::string& s) {
  if (s == "single") return {1, false};
  if (s.rfind("multi:", 0) == 0) {
    const std::string k = s.substr(6);
    int turns = 0;
    const auto [ptr, ec] = std::from_chars(k.data(), k.data() + k.size(), turns);
    if (ec == std::errc{} && ptr == k.data() + k.size() && turns >= 1 && turns <= 64) return {turns, true};
  }
  throw DomainError("invalid mode '" + s + "' (expected single or multi:k)");
}

struct TurnRecord {
  std::string text;
  std::optional<Action> parsed;
  bool executed = false;
  bool collided = false;
  RewardBreakdown reward;
  AgentState state_after;
};

inline void to_json(nlohmann::json& j, const TurnRecord& t) {
  j = {{"text", t.text},
       {"parsed", t.parsed ? nlohmann::json(*t.parsed) : nlohmann::json(nullptr)},
       {"executed", t.executed},
       {"collided", t.collided},
       {"reward", t.reward}};
}

/// One sample being played: the agent starts at the query pose and may act
/// up to `max_turns` times, stopping at the first answerable view.
class Episode {
public:
  Episode(const Scene& scene, const SampleRecord& record, RolloutConfig cfg, int max_turns, InstanceImage query_view)
      : scene_(&scene), record_(&record), cfg_(std::move(cfg)), max_turns_(max_turns), state_(record.s_qry),
        view_(std::move(query_view)) {}

  [[nodiscard]] bool finished() const noexcept {
    return static_cast<int>(turns_.size()) >= max_turns_ || (!turns_.empty() && turns_.back().reward.verifier == 1);
  }
  [[nodiscard]] int turns_remaining() const noexcept { return finished() ? 0 : max_turns_ - static_cast<int>(turns_.size()); }
  [[nodiscard]] const InstanceImage& current_view() const noexcept { return view_; }
  [[nodiscard]] const AgentState& current_state() const noexcept { return state_; }
  [[nodiscard]] const std::vector<TurnRecord>& turns() const noexcept { return turns_; }
  [[nodiscard]] const SampleRecord& record() const noexcept { return *record_; }

  const TurnRecord& act(const std::string& text) {
    if (finished()) throw DomainError("episode already finished");
    Rollout r = execute_action(*scene_, *record_, state_, text, cfg_);
    TurnRecord t{text, r.action.parsed, r.executed, r.collided, r.reward, r.final_state};
    state_ = r.final_state;
    if (r.view) view_ = std::move(*r.view);
    turns_.push_back(std::move(t));
    return turns_.back();
  }

private:
  const Scene* scene_;
  const SampleRecord* record_;
  RolloutConfig cfg_;
  int max_turns_;
  AgentState state_;
  InstanceImage view_;
  std::vector<TurnRecord> turns_;
};

struct SampleOutcome {
  std::string sample_id;
  QuestionType question_type = QuestionType::existence;
  std::vector<TurnRecord> turns;
  RewardBreakdown final_reward;
  bool success = false;
  bool format_valid = false;
  double position_error = 0.0;
  double azimuth_error = 0.0;
  std::string answer;
};

inline void to_json(nlohmann::json& j, const SampleOutcome& o) {
  j = {{"sample_id", o.sample_id},        {"question_type", to_string(o.question_type)},
       {"turns", o.turns},                {"turns_used", o.turns.size()},
       {"final_reward", o.final_reward},  {"success", o.success},
       {"format_valid", o.format_valid},  {"position_error_cm", o.position_error},
       {"azimuth_error_deg", o.azimuth_error}, {"answer", o.answer}};
}

[[nodiscard]] inline SampleOutcome outcome_of(const Episode& ep) {
  SampleOutcome o;
  const SampleRecord& rec = ep.record();
  o.sample_id = rec.sample_id;
  o.question_type = rec.question_type;
  o.turns = ep.turns();
  if (!o.turns.empty()) o.final_reward = o.turns.back().reward;
  o.success = o.final_reward.verifier == 1;
  o.format_valid = o.final_reward.format == 1;
  o.position_error = position_error(ep.current_state(), rec.s_tgt);
  o.azimuth_error = azimuth_error(ep.current_state(), rec.s_tgt);
  o.answer = rec.answer;
  return o;
}

// ---------------------------------------------------------------------------
// Report

struct ReportRow {
  std::size_t count = 0;
  double success_rate = 0.0;
  double format_rate = 0.0;
  double mean_position_error_cm = 0.0;
  double mean_azimuth_error_deg = 0.0;
  double mean_reward = 0.0;
  double mean_turns = 0.0;
};

inline void to_json(nlohmann::json& j, const ReportRow& r) {
  j = {{"count", r.count}, {"success_rate", r.success_rate}, {"format_rate", r.format_rate},
       {"mean_position_error_cm", r.mean_position_error_cm}, {"mean_azimuth_error_deg", r.mean_azimuth_error_deg},
       {"mean_reward", r.mean_reward}, {"mean_turns", r.mean_turns}};
}

struct BaselineRow {
  std::size_t count = 0;
  double success_rate = 0.0;
  std::map<std::string, double> per_question_type;
};

inline void to_json(nlohmann::json& j, const BaselineRow& r) {
  j = {{"count", r.count}, {"success_rate", r.success_rate}, {"per_question_type", r.per_question_type}};
}

struct EvalReport {
  std::string metric = "oracle_verifier_success";
  EvalMode mode;
  ReportRow overall;
  std::map<std::string, ReportRow> per_question_type;
  BaselineRow query_view;
  BaselineRow target_view;
};

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"metric", r.metric},
       {"mode", r.mode.label()},
       {"overall", r.overall},
       {"per_question_type", r.per_question_type},
       {"baselines", {{"query_view", r.query_view}, {"target_view", r.target_view}}}};
}

namespace detail {

[[nodiscard]] inline ReportRow aggregate_rows(const std::vector<const SampleOutcome*>& xs) {
  ReportRow row;
  row.count = xs.size();
  if (xs.empty()) return row;
  double s = 0, f = 0, pe = 0, ae = 0, rw = 0, tu = 0;
  for (const auto* o : xs) {
    s += o->success ? 1.0 : 0.0;
    f += o->format_valid ? 1.0 : 0.0;
    pe += o->position_error;
    ae += o->azimuth_error;
    rw += o->final_reward.total;
    tu += static_cast<double>(o->turns.size());
  }
  const double n = static_cast<double>(xs.size());
  row.success_rate = s / n;
  row.format_rate = f / n;
  row.mean_position_error_cm = pe / n;
  row.mean_azimuth_error_deg = ae / n;
  row.mean_reward = rw / n;
  row.mean_turns = tu / n;
  return row;
}

}  // namespace detail

/// Verifier success on the stored query and target views of the given records.
[[nodiscard]] inline std::pair<BaselineRow, BaselineRow> baseline_rows(const Dataset& ds, const std::vector<std::size_t>& indices,
                                                                       const VerifierConfig& vcfg) {
  BaselineRow q, t;
  std::map<std::string, std::pair<double, double>> per;  // type -> (qry hits, tgt hits)
  std::map<std::string, double> counts;
  for (const std::size_t i : indices) {
    const SampleRecord& r = ds.records.at(i);
    const int qs = oracle_verify(ds.load_view(r.view_qry), r, vcfg);
    const int ts = oracle_verify(ds.load_view(r.view_tgt), r, vcfg);
    const std::string type = to_string(r.question_type);
    per[type].first += qs;
    per[type].second += ts;
    counts[type] += 1;
    q.success_rate += qs;
    t.success_rate += ts;
  }
  q.count = t.count = indices.size();
  if (!indices.empty()) {
    q.success_rate /= static_cast<double>(indices.size());
    t.success_rate /= static_cast<double>(indices.size());
  }
  for (const auto& [type, hits] : per) {
    q.per_question_type[type] = hits.first / counts[type];
    t.per_question_type[type] = hits.second / counts[type];
  }
  return {q, t};
}

[[nodiscard]] inline std::pair<BaselineRow, BaselineRow> baseline_rows(const Dataset& ds, const VerifierConfig& vcfg) {
  std::vector<std::size_t> all(ds.records.size());
  std::iota(all.begin(), all.end(), 0);
  return baseline_rows(ds, all, vcfg);
}

/// Pure aggregation of per-sample outcomes (in order) into a report.
[[nodiscard]] inline EvalReport aggregate_report(const std::vector<SampleOutcome>& outcomes, const EvalMode& mode,
                                                 std::pair<BaselineRow, BaselineRow> baselines) {
  EvalReport rep;
  rep.mode = mode;
  std::vector<const SampleOutcome*> all;
  std::map<std::string, std::vector<const SampleOutcome*>> by_type;
  for (const auto& o : outcomes) {
    all.push_back(&o);
    by_type[to_string(o.question_type)].push_back(&o);
  }
  rep.overall = detail::aggregate_rows(all);
  for (const auto& [type, xs] : by_type) rep.per_question_type[type] = detail::aggregate_rows(xs);
  rep.query_view = std::move(baselines.first);
  rep.target_view = std::move(baselines.second);
  return rep;
}

// ---------------------------------------------------------------------------
// Prediction sources

/// Predicted action texts per sample id, in turn order.
using ActionLog = std::map<std::string, std::vector<std::string>>;

/// Reads JSONL lines of {"sample_id", "text"}; repeated ids are successive turns.
[[nodiscard]] inline ActionLog load_action_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open action file " + path.string());
  ActionLog log;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      log[j.at("sample_id").get<std::string>()].push_back(j.at("text").get<std::string>());
    } catch (const std::exception& e) {
      throw IoError("action file line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return log;
}

struct RandomActions {
  std::uint64_t seed = 0;
  double max_distance = 200.0;
};

/// Policy acting on the current view (mean action), a fixed action log, or uniform random actions.
using PredictionSource = std::variant<GaussianPolicy, ActionLog, RandomActions>;

struct MissingSamplesError : IoError {
  std::vector<std::string> missing;
  explicit MissingSamplesError(std::vector<std::string> ids)
      : IoError("action file lacks " + std::to_string(ids.size()) + " sample id(s), first: " + (ids.empty() ? "" : ids.front())),
        missing(std::move(ids)) {}
};

struct Evaluation {
  EvalReport report;
  std::vector<SampleOutcome> outcomes;
};

[[nodiscard]] inline std::string random_action_text(Rng& rng, double max_distance) {
  const Action a{static_cast<double>(rng.uniform_int(-179, 180)),
                 static_cast<double>(rng.uniform_int(0, static_cast<std::int64_t>(max_distance))),
                 static_cast<double>(rng.uniform_int(-179, 180))};
  return format_action(a);
}

/// Evaluates a subset of records (all when `indices` is empty).
[[nodiscard]] inline Evaluation evaluate_policy(const Dataset& ds, const PredictionSource& source, const EvalMode& mode,
                                                const VerifierConfig& vcfg, std::vector<std::size_t> indices = {},
                                                unsigned threads = 1) {
  if (indices.empty()) {
    indices.resize(ds.records.size());
    std::iota(indices.begin(), indices.end(), 0);
  }
  if (const auto* log = std::get_if<ActionLog>(&source)) {
    std::vector<std::string> missing;
    for (const std::size_t i : indices)
      if (!log->count(ds.records[i].sample_id)) missing.push_back(ds.records[i].sample_id);
    if (!missing.empty()) throw MissingSamplesError(std::move(missing));
  }
  RolloutConfig rcfg = ds.rollout_config();
  rcfg.verifier = vcfg;
  std::vector<SampleOutcome> outcomes(indices.size());
  parallel_for(indices.size(), threads, [&](std::size_t n) {
    const SampleRecord& rec = ds.records[indices[n]];
    Episode ep(ds.scene_for(rec), rec, rcfg, mode.max_turns, ds.load_view(rec.view_qry));
    Rng rng(derive_seed(std::get_if<RandomActions>(&source) ? std::get<RandomActions>(source).seed : 0, indices[n]));
    std::size_t turn = 0;
    while (!ep.finished()) {
      std::string text;
      if (const auto* p = std::get_if<GaussianPolicy>(&source)) {
        text = format_action(p->mean_action(extract_features(ep.current_view(), rec.support_id)));
      } else if (const auto* log = std::get_if<ActionLog>(&source)) {
        const auto& texts = log->at(rec.sample_id);
        if (turn >= texts.size()) break;
        text = texts[turn];
      } else {
        text = random_action_text(rng, std::get<RandomActions>(source).max_distance);
      }
      ep.act(text);
      ++turn;
    }
    outcomes[n] = outcome_of(ep);
  });
  Evaluation ev;
  ev.report = aggregate_report(outcomes, mode, baseline_rows(ds, indices, vcfg));
  ev.outcomes = std::move(outcomes);
  return ev;
}

/// Writes the report and, next to it, the per-sample log (`<report>.samples.jsonl`).
inline void write_evaluation(const Evaluation& ev, const std::filesystem::path& report_path) {
  write_file(report_path.string(), nlohmann::json(ev.report).dump(2) + "\n");
  std::string lines;
  for (const auto& o : ev.outcomes) lines += nlohmann::json(o).dump() + "\n";
  write_file(report_path.string() + ".samples.jsonl", lines);
}

}  // namespace avs
