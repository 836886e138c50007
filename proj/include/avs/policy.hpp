#pragma once
/**
 * @file policy.hpp
 * @brief Linear-Gaussian action policy over observation features, with a
 *        supervised maximum-likelihood stage and group-relative policy
 *        optimization (clipped surrogate plus analytic KL to a reference).
 *
 * The Gaussian lives in an unconstrained "raw" space z in R^3. Actions are
 *   heading  = 180 * tanh(z0)
 *   distance = distance_scale * softplus(z1)
 *   view     = 180 * tanh(z2)
 * so every sample is a legal action.
 */

#include <avs/error.hpp>
#include <avs/geometry.hpp>
#include <avs/parallel.hpp>
#include <avs/render.hpp>
#include <avs/reward.hpp>
#include <avs/rng.hpp>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace avs {

inline constexpr std::size_t kFeatureDim = 5;
inline constexpr std::size_t kActionDim = 3;

/// Observation summary computed from the support's mask only.
struct ObservationFeatures {
  double support_visible_fraction = 0.0;
  double support_centroid_dx = 0.0;  ///< (col - W/2) / (W/2); positive = right
  double support_centroid_dy = 0.0;  ///< (row - H/2) / (H/2); positive = down
  double support_present = 0.0;
  double bias = 1.0;

  [[nodiscard]] std::array<double, kFeatureDim> vector() const noexcept {
    return {support_visible_fraction, support_centroid_dx, support_centroid_dy, support_present, bias};
  }
  friend bool operator==(const ObservationFeatures&, const ObservationFeatures&) = default;
};

[[nodiscard]] inline ObservationFeatures extract_features(const InstanceImage& img, int support_id) {
  ObservationFeatures f;
  const int ids[1] = {support_id};
  const Centroid c = mask_centroid(img, std::span<const int>(ids));
  if (c.pixels == 0 || img.pixels() == 0) return f;
  f.support_visible_fraction = static_cast<double>(c.pixels) / static_cast<double>(img.pixels());
  f.support_centroid_dx = (c.col - 0.5 * img.width) / (0.5 * img.width);
  f.support_centroid_dy = (c.row - 0.5 * img.height) / (0.5 * img.height);
  f.support_present = 1.0;
  return f;
}

using Raw = std::array<double, kActionDim>;

[[nodiscard]] inline double softplus(double x) noexcept { return x > 30.0 ? x : std::log1p(std::exp(x)); }

class GaussianPolicy {
public:
  static constexpr std::size_t kParamCount = kActionDim * kFeatureDim + kActionDim + kActionDim;

  GaussianPolicy() { params_.fill(0.0); set_log_std({std::log(0.3), std::log(0.5), std::log(0.3)}); }

  double distance_scale = 100.0;  ///< cm
  static constexpr double kMinLogStd = -4.0;
  static constexpr double kMaxLogStd = 1.0;

  [[nodiscard]] std::span<double> params() noexcept { return params_; }
  [[nodiscard]] std::span<const double> params() const noexcept { return params_; }

  [[nodiscard]] double weight(std::size_t d, std::size_t k) const noexcept { return params_[d * kFeatureDim + k]; }
  [[nodiscard]] double& weight(std::size_t d, std::size_t k) noexcept { return params_[d * kFeatureDim + k]; }
  [[nodiscard]] double bias(std::size_t d) const noexcept { return params_[kActionDim * kFeatureDim + d]; }
  [[nodiscard]] double& bias(std::size_t d) noexcept { return params_[kActionDim * kFeatureDim + d]; }
  [[nodiscard]] double log_std(std::size_t d) const noexcept { return params_[kActionDim * kFeatureDim + kActionDim + d]; }
  [[nodiscard]] double& log_std(std::size_t d) noexcept { return params_[kActionDim * kFeatureDim + kActionDim + d]; }
  [[nodiscard]] double stddev(std::size_t d) const noexcept { return std::exp(log_std(d)); }

  void set_log_std(const Raw& v) {
    for (std::size_t d = 0; d < kActionDim; ++d) log_std(d) = v[d];
  }
  void clamp_log_std() {
    for (std::size_t d = 0; d < kActionDim; ++d) log_std(d) = std::clamp(log_std(d), kMinLogStd, kMaxLogStd);
  }

  static constexpr std::size_t weight_index(std::size_t d, std::size_t k) { return d * kFeatureDim + k; }
  static constexpr std::size_t bias_index(std::size_t d) { return kActionDim * kFeatureDim + d; }
  static constexpr std::size_t log_std_index(std::size_t d) { return kActionDim * kFeatureDim + kActionDim + d; }

  [[nodiscard]] Raw mean(const ObservationFeatures& f) const noexcept {
    const auto x = f.vector();
    Raw m{};
    for (std::size_t d = 0; d < kActionDim; ++d) {
      double s = bias(d);
      for (std::size_t k = 0; k < kFeatureDim; ++k) s += weight(d, k) * x[k];
      m[d] = s;
    }
    return m;
  }

  [[nodiscard]] double log_prob(const ObservationFeatures& f, const Raw& z) const noexcept {
    const Raw m = mean(f);
    double lp = 0.0;
    for (std::size_t d = 0; d < kActionDim; ++d) {
      const double sd = stddev(d);
      const double r = (z[d] - m[d]) / sd;
      lp += -0.5 * r * r - log_std(d) - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    return lp;
  }

  [[nodiscard]] Raw sample_raw(const ObservationFeatures& f, Rng& rng) const {
    Raw z = mean(f);
    for (std::size_t d = 0; d < kActionDim; ++d) z[d] += stddev(d) * rng.normal();
    return z;
  }

  [[nodiscard]] Action squash(const Raw& z) const {
    return {normalize_angle(180.0 * std::tanh(z[0])), distance_scale * softplus(z[1]), normalize_angle(180.0 * std::tanh(z[2]))};
  }

  /// Inverse of squash, clamped away from the open ends of each range.
  [[nodiscard]] Raw unsquash(const Action& a) const {
    constexpr double kEdge = 1.0 - 1e-6;
    const double h = std::clamp(a.heading / 180.0, -kEdge, kEdge);
    const double v = std::clamp(a.view / 180.0, -kEdge, kEdge);
    const double y = std::max(a.distance / distance_scale, 1e-6);
    const double z1 = y > 30.0 ? y : std::log(std::expm1(y));
    return {std::atanh(h), z1, std::atanh(v)};
  }

  [[nodiscard]] Action mean_action(const ObservationFeatures& f) const { return squash(mean(f)); }

  friend bool operator==(const GaussianPolicy& a, const GaussianPolicy& b) {
    return a.params_ == b.params_ && a.distance_scale == b.distance_scale;
  }

private:
  std::array<double, kParamCount> params_{};
};

using Gradient = std::array<double, GaussianPolicy::kParamCount>;

/// Analytic KL(p || q) between the diagonal Gaussians of two policies at `f`.
[[nodiscard]] inline double kl_divergence(const GaussianPolicy& p, const GaussianPolicy& q, const ObservationFeatures& f) {
  const Raw mp = p.mean(f), mq = q.mean(f);
  double kl = 0.0;
  for (std::size_t d = 0; d < kActionDim; ++d) {
    const double sp = p.stddev(d), sq = q.stddev(d);
    const double dm = mp[d] - mq[d];
    kl += (q.log_std(d) - p.log_std(d)) + (sp * sp + dm * dm) / (2.0 * sq * sq) - 0.5;
  }
  return kl;
}

// ---------------------------------------------------------------------------
// Supervised stage

struct LabeledExample {
  ObservationFeatures features;
  Action target;
};

/// Mean Gaussian negative log-likelihood of the raw-space labels, with gradient.
[[nodiscard]] inline double sft_loss(const GaussianPolicy& policy, std::span<const LabeledExample> data, Gradient* grad = nullptr) {
  if (data.empty()) throw DomainError("sft_loss: empty dataset");
  if (grad) grad->fill(0.0);
  double total = 0.0;
  const double n = static_cast<double>(data.size());
  for (const auto& ex : data) {
    const Raw z = policy.unsquash(ex.target);
    const Raw m = policy.mean(ex.features);
    const auto x = ex.features.vector();
    total -= policy.log_prob(ex.features, z);
    if (!grad) continue;
    for (std::size_t d = 0; d < kActionDim; ++d) {
      const double var = policy.stddev(d) * policy.stddev(d);
      const double diff = z[d] - m[d];
      const double dmu = -diff / var;
      for (std::size_t k = 0; k < kFeatureDim; ++k) (*grad)[GaussianPolicy::weight_index(d, k)] += dmu * x[k] / n;
      (*grad)[GaussianPolicy::bias_index(d)] += dmu / n;
      (*grad)[GaussianPolicy::log_std_index(d)] += (1.0 - diff * diff / var) / n;
    }
  }
  return total / n;
}

/// Adam on a flat parameter vector (minimizes).
class Adam {
public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.fill(0.0);
    v_.fill(0.0);
  }

  void step(std::span<double> params, const Gradient& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1 - beta2_) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

private:
  double lr_, beta1_, beta2_, eps_;
  Gradient m_{}, v_{};
  int t_ = 0;
};

inline void require_finite(const Gradient& g, const char* where) {
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!std::isfinite(g[i])) throw NumericError(std::string(where) + ": non-finite gradient at parameter " + std::to_string(i));
}

struct SftResult {
  GaussianPolicy policy;
  std::vector<double> loss_curve;  ///< full-batch NLL before each update, then the final value
};

/// Full-batch maximum likelihood fit with Adam.
[[nodiscard]] inline SftResult sft_fit(GaussianPolicy policy, std::span<const LabeledExample> data, int iterations, double lr) {
  if (data.empty()) throw DomainError("sft_fit: empty dataset");
  Adam opt(lr);
  SftResult out;
  Gradient g{};
  for (int it = 0; it < iterations; ++it) {
    out.loss_curve.push_back(sft_loss(policy, data, &g));
    require_finite(g, "sft_fit");
    opt.step(policy.params(), g);
    policy.clamp_log_std();
  }
  out.loss_curve.push_back(sft_loss(policy, data));
  out.policy = policy;
  return out;
}

// ---------------------------------------------------------------------------
// GRPO

/// Group-standardized rewards with population std; zeros for a flat group.
[[nodiscard]] inline std::vector<double> grpo_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw DomainError("grpo_advantages: group needs at least two rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (const double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> adv(rewards.size(), 0.0);
  if (sd < 1e-8) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / sd;
  return adv;
}

struct GrpoConfig {
  int group_size = 16;
  double clip_eps = 0.2;
  double kl_beta = 0.04;
  double lr = 0.01;
  int inner_iters = 4;      ///< surrogate updates per sampled batch
  int batch_records = 16;   ///< prompts per step
  int steps = 100;
  unsigned threads = 1;
  RewardWeights weights;

  void validate() const {
    if (group_size < 2) throw DomainError("grpo: group size must be at least 2");
    if (kl_beta < 0) throw DomainError("grpo: kl_beta must be non-negative");
    if (!(clip_eps > 0)) throw DomainError("grpo: clip epsilon must be positive");
    if (inner_iters < 1 || batch_records < 1 || steps < 0) throw DomainError("grpo: bad iteration counts");
  }
};

inline void to_json(nlohmann::json& j, const GrpoConfig& c) {
  j = {{"group_size", c.group_size}, {"clip_eps", c.clip_eps}, {"kl_beta", c.kl_beta}, {"lr", c.lr},
       {"inner_iters", c.inner_iters}, {"batch_records", c.batch_records}, {"steps", c.steps}, {"weights", c.weights}};
}

/// One frozen rollout: the sampled raw action, its log-prob under the
/// sampling policy, and its group-relative advantage.
struct RolloutSample {
  std::size_t context = 0;  ///< index into the batch's feature list
  Raw z{};
  double old_log_prob = 0.0;
  double advantage = 0.0;
};

struct SurrogateValue {
  double objective = 0.0;  ///< clipped surrogate minus beta * KL (maximized)
  double surrogate = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
};

/// Clipped surrogate objective over frozen samples, minus kl_beta times the
/// mean KL to the reference over the batch contexts. When `grad` is given it
/// receives the gradient of the objective.
[[nodiscard]] inline SurrogateValue grpo_objective(const GaussianPolicy& policy, const GaussianPolicy& reference,
                                                  std::span<const ObservationFeatures> contexts,
                                                  std::span<const RolloutSample> samples, double clip_eps,
                                                  double kl_beta, Gradient* grad = nullptr) {
  SurrogateValue out;
  if (grad) grad->fill(0.0);
  if (samples.empty() || contexts.empty()) return out;
  const double ns = static_cast<double>(samples.size());
  const double nc = static_cast<double>(contexts.size());
  std::size_t clipped = 0;
  for (const auto& s : samples) {
    const ObservationFeatures& f = contexts[s.context];
    const double ratio = std::exp(policy.log_prob(f, s.z) - s.old_log_prob);
    const double clipped_ratio = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    if (ratio != clipped_ratio) ++clipped;
    const double unclipped_term = ratio * s.advantage;
    const double clipped_term = clipped_ratio * s.advantage;
    out.surrogate += std::min(unclipped_term, clipped_term) / ns;
    if (!grad || s.advantage == 0.0 || clipped_term < unclipped_term) continue;
    const Raw m = policy.mean(f);
    const auto x = f.vector();
    const double scale = s.advantage * ratio / ns;
    for (std::size_t d = 0; d < kActionDim; ++d) {
      const double var = policy.stddev(d) * policy.stddev(d);
      const double diff = s.z[d] - m[d];
      const double dmu = diff / var;
      for (std::size_t k = 0; k < kFeatureDim; ++k) (*grad)[GaussianPolicy::weight_index(d, k)] += scale * dmu * x[k];
      (*grad)[GaussianPolicy::bias_index(d)] += scale * dmu;
      (*grad)[GaussianPolicy::log_std_index(d)] += scale * (diff * diff / var - 1.0);
    }
  }
  for (const auto& f : contexts) {
    out.kl += kl_divergence(policy, reference, f) / nc;
    if (!grad || kl_beta == 0.0) continue;
    const Raw mp = policy.mean(f), mq = reference.mean(f);
    const auto x = f.vector();
    for (std::size_t d = 0; d < kActionDim; ++d) {
      const double vq = reference.stddev(d) * reference.stddev(d);
      const double dmu = (mp[d] - mq[d]) / vq;
      const double w = -kl_beta / nc;
      for (std::size_t k = 0; k < kFeatureDim; ++k) (*grad)[GaussianPolicy::weight_index(d, k)] += w * dmu * x[k];
      (*grad)[GaussianPolicy::bias_index(d)] += w * dmu;
      (*grad)[GaussianPolicy::log_std_index(d)] += w * (policy.stddev(d) * policy.stddev(d) / vq - 1.0);
    }
  }
  out.clip_fraction = static_cast<double>(clipped) / ns;
  out.objective = out.surrogate - kl_beta * out.kl;
  return out;
}

/// Reward for an action string emitted in a given context.
using RewardFn = std::function<double(std::size_t context, const std::string& text)>;

struct GrpoStats {
  double mean_reward = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  double objective = 0.0;
};

/// Samples a group per context, scores it, and takes `inner_iters` Adam
/// ascent steps on the clipped surrogate. Sampling is sequential; reward
/// evaluation may run on several threads and is gathered by index.
inline GrpoStats grpo_step(GaussianPolicy& policy, const GaussianPolicy& reference,
                           std::span<const ObservationFeatures> contexts, const RewardFn& reward, const GrpoConfig& cfg,
                           Adam& opt, Rng& rng) {
  cfg.validate();
  const std::size_t g = static_cast<std::size_t>(cfg.group_size);
  std::vector<RolloutSample> samples;
  std::vector<std::string> texts;
  samples.reserve(contexts.size() * g);
  for (std::size_t c = 0; c < contexts.size(); ++c)
    for (std::size_t i = 0; i < g; ++i) {
      RolloutSample s;
      s.context = c;
      s.z = policy.sample_raw(contexts[c], rng);
      s.old_log_prob = policy.log_prob(contexts[c], s.z);
      texts.push_back(format_action(policy.squash(s.z)));
      samples.push_back(s);
    }
  std::vector<double> rewards(samples.size(), 0.0);
  parallel_for(samples.size(), cfg.threads, [&](std::size_t i) { rewards[i] = reward(samples[i].context, texts[i]); });

  GrpoStats stats;
  for (std::size_t c = 0; c < contexts.size(); ++c) {
    const auto adv = grpo_advantages(std::span<const double>(rewards).subspan(c * g, g));
    for (std::size_t i = 0; i < g; ++i) samples[c * g + i].advantage = adv[i];
  }
  stats.mean_reward = rewards.empty() ? 0.0 : std::accumulate(rewards.begin(), rewards.end(), 0.0) / rewards.size();

  Gradient grad{};
  for (int it = 0; it < cfg.inner_iters; ++it) {
    const auto v = grpo_objective(policy, reference, contexts, samples, cfg.clip_eps, cfg.kl_beta, &grad);
    require_finite(grad, "grpo_step");
    for (auto& x : grad) x = -x;  // ascend
    opt.step(policy.params(), grad);
    policy.clamp_log_std();
    stats.kl = v.kl;
    stats.clip_fraction = v.clip_fraction;
    stats.objective = v.objective;
  }
  for (const double p : policy.params())
    if (!std::isfinite(p)) throw NumericError("grpo_step: non-finite parameters after update");
  return stats;
}

// ---------------------------------------------------------------------------
// Checkpoints

[[nodiscard]] inline nlohmann::json policy_to_json(const GaussianPolicy& p, const nlohmann::json& config = nlohmann::json::object()) {
  nlohmann::json w = nlohmann::json::array();
  for (std::size_t d = 0; d < kActionDim; ++d) {
    std::vector<double> row;
    for (std::size_t k = 0; k < kFeatureDim; ++k) row.push_back(p.weight(d, k));
    w.push_back(row);
  }
  std::vector<double> b, ls;
  for (std::size_t d = 0; d < kActionDim; ++d) {
    b.push_back(p.bias(d));
    ls.push_back(p.log_std(d));
  }
  return {{"kind", "linear_gaussian"},
          {"feature_names", {"support_visible_fraction", "support_centroid_dx", "support_centroid_dy", "support_present", "bias"}},
          {"action_names", {"heading", "distance", "view"}},
          {"weights", w},
          {"bias", b},
          {"log_std", ls},
          {"distance_scale", p.distance_scale},
          {"config", config}};
}

[[nodiscard]] inline GaussianPolicy policy_from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "linear_gaussian") throw DomainError("checkpoint: unsupported policy kind");
  GaussianPolicy p;
  const auto& w = j.at("weights");
  if (w.size() != kActionDim) throw DomainError("checkpoint: weight rows");
  for (std::size_t d = 0; d < kActionDim; ++d) {
    if (w[d].size() != kFeatureDim) throw DomainError("checkpoint: weight columns");
    for (std::size_t k = 0; k < kFeatureDim; ++k) p.weight(d, k) = w[d][k].get<double>();
    p.bias(d) = j.at("bias").at(d).get<double>();
    p.log_std(d) = j.at("log_std").at(d).get<double>();
  }
  p.distance_scale = j.value("distance_scale", 100.0);
  return p;
}

}  // namespace avs
