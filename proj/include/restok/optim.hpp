#pragma once

#include <vector>

#include "restok/params.hpp"

RESTOK_BEGIN_NAMESPACE

struct AdamWConfig {
  double lr = 1e-4;
  double min_lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  int warmup_steps = 0;
  int total_steps = 1;
  double grad_clip = 1.0;  // global-norm clip; <= 0 disables
};

// Linear warmup to lr, then cosine decay to min_lr at total_steps.
double cosine_lr(const AdamWConfig& cfg, int step);

// Decoupled weight decay Adam. Decay applies to parameters of rank >= 2.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  // Applies one update from the accumulated Parameter::grad values and returns
  // the learning rate used. Gradients are left untouched.
  double step(ParameterStore& params);
  int steps_taken() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  int step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

RESTOK_END_NAMESPACE
