#include "restok/optim.hpp"

#include <cmath>
#include <numbers>

#include "restok/errors.hpp"

RESTOK_BEGIN_NAMESPACE

double cosine_lr(const AdamWConfig& cfg, int step) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step + 1) / cfg.warmup_steps;
  }
  const int span = std::max(1, cfg.total_steps - cfg.warmup_steps);
  const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / span);
  return cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

double AdamW::step(ParameterStore& params) {
  auto all = params.all();
  if (m_.empty()) {
    for (auto* p : all) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }
  if (m_.size() != all.size()) throw StateError("AdamW: parameter set changed between steps");

  double clip = 1.0;
  if (cfg_.grad_clip > 0) {
    double sq = 0;
    for (auto* p : all) {
      if (!p->trainable) continue;
      for (Real g : p->grad.values()) sq += static_cast<double>(g) * g;
    }
    if (!std::isfinite(sq)) throw NumericError("AdamW: non-finite gradient norm");
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) clip = cfg_.grad_clip / norm;
  }

  const double lr = cosine_lr(cfg_, step_);
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
  for (std::size_t k = 0; k < all.size(); ++k) {
    Parameter& p = *all[k];
    if (!p.trainable) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    const bool decay = p.value.rank() >= 2 && cfg_.weight_decay > 0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = static_cast<double>(p.grad[i]) * clip;
      m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g * g;
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      double w = p.value[i];
      if (decay) w -= lr * cfg_.weight_decay * w;
      w -= lr * update;
      p.value[i] = static_cast<Real>(w);
    }
  }
  return lr;
}

RESTOK_END_NAMESPACE
