#pragma once
/**
 * @file train.hpp
 * @brief Dataset-level training drivers: supervised warm start on the
 *        ground-truth actions, GRPO on the verifiable reward, and the
 *        two-stage combination, with stage budgets shared across modes.
 */

#include <avs/curate.hpp>
#include <avs/eval.hpp>
#include <avs/policy.hpp>
#include <avs/reward.hpp>

#include <json.hpp>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

namespace avs {

enum class TrainMode { sft, rl, sft_rl };

[[nodiscard]] inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::sft: return "sft";
    case TrainMode::rl: return "rl";
    case TrainMode::sft_rl: return "sft-rl";
  }
  return "?";
}

[[nodiscard]] inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "sft") return TrainMode::sft;
  if (s == "rl") return TrainMode::rl;
  if (s == "sft-rl") return TrainMode::sft_rl;
  throw DomainError("unknown training mode '" + s + "' (expected sft, rl or sft-rl)");
}

/// Stage budgets are shared across modes: every SFT stage runs `sft_iters`
/// full-batch updates and every RL stage runs `rl_steps` GRPO steps.
struct TrainConfig {
  TrainMode mode = TrainMode::sft_rl;
  std::uint64_t seed = 1;
  int sft_iters = 200;
  double sft_lr = 0.05;
  int rl_steps = 40;
  GrpoConfig grpo;

  void validate() const {
    if (sft_iters < 0 || rl_steps < 0) throw DomainError("train: negative budget");
    if (mode != TrainMode::rl && sft_iters < 1) throw DomainError("train: sft stage needs sft_iters >= 1");
    if (mode != TrainMode::sft && rl_steps < 1) throw DomainError("train: rl stage needs rl_steps >= 1");
    if (!(sft_lr > 0)) throw DomainError("train: sft_lr must be positive");
    grpo.validate();
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"mode", to_string(c.mode)}, {"seed", c.seed},   {"sft_iters", c.sft_iters}, {"sft_lr", c.sft_lr},
       {"rl_steps", c.rl_steps},    {"grpo", c.grpo}};
}

struct CurvePoint {
  std::string phase;  ///< "sft" or "rl"
  int step = 0;
  double sft_loss = 0.0;     ///< sft phase
  double mean_reward = 0.0;  ///< rl phase
  double kl = 0.0;
  double clip_fraction = 0.0;
};

struct TrainResult {
  GaussianPolicy policy;
  std::vector<CurvePoint> curve;
};

[[nodiscard]] inline std::vector<LabeledExample> sft_examples(const Dataset& ds) {
  std::vector<LabeledExample> out;
  out.reserve(ds.records.size());
  for (const auto& r : ds.records)
    out.push_back({extract_features(ds.load_view(r.view_qry), r.support_id), r.a_tgt});
  return out;
}

[[nodiscard]] inline std::vector<ObservationFeatures> query_features(const Dataset& ds) {
  std::vector<ObservationFeatures> out;
  out.reserve(ds.records.size());
  for (const auto& r : ds.records) out.push_back(extract_features(ds.load_view(r.view_qry), r.support_id));
  return out;
}

namespace detail {

inline void run_sft(TrainResult& res, const std::vector<LabeledExample>& data, int iters, double lr) {
  if (iters == 0) return;
  if (data.empty()) throw DomainError("train: empty dataset");
  const SftResult s = sft_fit(res.policy, data, iters, lr);
  for (int i = 0; i < iters; ++i) res.curve.push_back({"sft", i, s.loss_curve[static_cast<std::size_t>(i)], 0, 0, 0});
  res.policy = s.policy;
}

inline void run_grpo(TrainResult& res, const Dataset& ds, const std::vector<ObservationFeatures>& feats, int steps,
                     const GrpoConfig& cfg, std::uint64_t seed) {
  if (steps == 0) return;
  if (ds.records.empty()) throw DomainError("train: empty dataset");
  const GaussianPolicy reference = res.policy;
  const RolloutConfig rcfg = ds.rollout_config(cfg.weights);
  Adam opt(cfg.lr);
  Rng rng(derive_seed(seed, 0x5250));
  const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_records), ds.records.size());
  std::vector<std::size_t> order(ds.records.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  for (int step = 0; step < steps; ++step) {
    std::vector<std::size_t> batch;
    std::vector<ObservationFeatures> ctx;
    for (std::size_t i = 0; i < b; ++i) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
      ctx.push_back(feats[batch.back()]);
    }
    const RewardFn reward = [&](std::size_t c, const std::string& text) {
      const SampleRecord& r = ds.records[batch[c]];
      return verifiable_reward(ds.scene_for(r), r, text, rcfg).total;
    };
    const GrpoStats st = grpo_step(res.policy, reference, ctx, reward, cfg, opt, rng);
    res.curve.push_back({"rl", step, 0, st.mean_reward, st.kl, st.clip_fraction});
  }
}

}  // namespace detail

[[nodiscard]] inline TrainResult train_policy(const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  TrainResult res;
  switch (cfg.mode) {
    case TrainMode::sft:
      detail::run_sft(res, sft_examples(ds), cfg.sft_iters, cfg.sft_lr);
      break;
    case TrainMode::rl:
      detail::run_grpo(res, ds, query_features(ds), cfg.rl_steps, cfg.grpo, cfg.seed);
      break;
    case TrainMode::sft_rl:
      detail::run_sft(res, sft_examples(ds), cfg.sft_iters, cfg.sft_lr);
      detail::run_grpo(res, ds, query_features(ds), cfg.rl_steps, cfg.grpo, cfg.seed);
      break;
  }
  return res;
}

[[nodiscard]] inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os.precision(10);
  os << "phase,step,sft_loss,mean_reward,kl,clip_fraction\n";
  for (const auto& p : curve)
    os << p.phase << ',' << p.step << ',' << p.sft_loss << ',' << p.mean_reward << ',' << p.kl << ',' << p.clip_fraction << '\n';
  return os.str();
}

/// Writes `<out>` (checkpoint JSON) and `<out>.curve.csv`.
inline void save_training(const TrainResult& res, const TrainConfig& cfg, const std::filesystem::path& out) {
  write_file(out.string(), policy_to_json(res.policy, nlohmann::json(cfg)).dump(2) + "\n");
  write_file(out.string() + ".curve.csv", curve_csv(res.curve));
}

[[nodiscard]] inline GaussianPolicy load_policy(const std::filesystem::path& path) {
  try {
    return policy_from_json(nlohmann::json::parse(read_file(path.string())));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint " + path.string() + ": " + e.what());
  }
}

struct TwoStageRun {
  TrainMode mode = TrainMode::sft;
  TrainResult result;
  EvalReport heldout;
};

/// Trains SFT-only, RL-only and SFT-then-RL with the same stage budgets and
/// scores each on the held-out set. Writes `<mode>.json`, curves and
/// `<mode>.eval.json` under `out_dir` when it is non-empty.
[[nodiscard]] inline std::vector<TwoStageRun> train_two_stage(const Dataset& train, const Dataset& heldout, TrainConfig cfg,
                                                              const std::filesystem::path& out_dir = {}) {
  std::vector<TwoStageRun> runs;
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  for (const TrainMode m : {TrainMode::sft, TrainMode::rl, TrainMode::sft_rl}) {
    cfg.mode = m;
    TwoStageRun run{m, train_policy(train, cfg), {}};
    const Evaluation ev = evaluate_policy(heldout, run.result.policy, EvalMode{}, heldout.verifier);
    run.heldout = ev.report;
    if (!out_dir.empty()) {
      save_training(run.result, cfg, out_dir / (to_string(m) + ".json"));
      write_evaluation(ev, out_dir / (to_string(m) + ".eval.json"));
    }
    runs.push_back(std::move(run));
  }
  return runs;
}

}  // namespace avs
