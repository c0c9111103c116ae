#include "restok/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "restok/errors.hpp"

RESTOK_BEGIN_NAMESPACE

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

double cfg_scale_at(int step, int total_steps, const CfgSchedule& cfg) {
  if (total_steps < 1 || step < 0 || step >= total_steps) {
    throw ConfigError("cfg_scale_at: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(total_steps) + ")");
  }
  switch (cfg.kind) {
    case CfgKind::Off:
      return 1.0;
    case CfgKind::Step:
      return step >= cfg.start_ratio * total_steps ? cfg.max_value : 1.0;
    case CfgKind::Linear:
      if (total_steps == 1) return cfg.max_value;
      return 1.0 + (cfg.max_value - 1.0) * step / (total_steps - 1);
  }
  return 1.0;
}

std::vector<double> guided_logits(std::span<const Real> cond, std::span<const Real> uncond, double scale) {
  if (cond.size() != uncond.size()) throw DimensionError("guided_logits: size mismatch");
  std::vector<double> out(cond.size());
  for (std::size_t i = 0; i < cond.size(); ++i) {
    out[i] = double(uncond[i]) + scale * (double(cond[i]) - double(uncond[i]));
  }
  return out;
}

void top_k_filter(std::vector<double>& logits, int k) {
  if (k <= 0 || k >= static_cast<int>(logits.size())) return;
  std::vector<int> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logits[a] > logits[b]; });
  for (std::size_t i = static_cast<std::size_t>(k); i < order.size(); ++i) logits[order[i]] = kNegInf;
}

std::vector<double> softmax(std::span<const double> logits) {
  double mx = kNegInf;
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = logits[i] == kNegInf ? 0.0 : std::exp(logits[i] - mx);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

void top_p_filter(std::vector<double>& logits, double p) {
  if (p <= 0 || p >= 1) return;
  const std::vector<double> probs = softmax(logits);
  std::vector<int> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });
  double mass = 0;
  std::size_t keep = 0;
  while (keep < order.size() && (keep == 0 || mass < p)) mass += probs[order[keep++]];
  for (std::size_t i = keep; i < order.size(); ++i) logits[order[i]] = kNegInf;
}

int sample_token(std::vector<double> logits, const CfgSchedule& cfg, std::mt19937_64& rng) {
  if (logits.empty()) throw NumericError("sampling from an empty distribution");
  for (double v : logits) {
    if (std::isnan(v)) throw NumericError("NaN logit encountered while sampling");
  }
  if (cfg.temperature == 0) {
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  for (double& v : logits) v /= cfg.temperature;
  top_k_filter(logits, cfg.top_k);
  top_p_filter(logits, cfg.top_p);
  const std::vector<double> probs = softmax(logits);
  std::discrete_distribution<int> pick(probs.begin(), probs.end());
  return pick(rng);
}

RESTOK_END_NAMESPACE
