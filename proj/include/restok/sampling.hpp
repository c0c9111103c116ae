#pragma once

#include <random>
#include <span>
#include <vector>

#include "restok/config.hpp"

RESTOK_BEGIN_NAMESPACE

// Guidance scale for a step of a sampling run with `total_steps` steps.
double cfg_scale_at(int step, int total_steps, const CfgSchedule& cfg);

// uncond + scale * (cond - uncond), elementwise.
std::vector<double> guided_logits(std::span<const Real> cond, std::span<const Real> uncond, double scale);

// Both filters set dropped entries to -inf. k = 0 and p = 0 leave the logits
// untouched. Ties at the k-th value keep the lower indices.
void top_k_filter(std::vector<double>& logits, int k);
// Keeps the smallest high-probability set whose mass reaches p.
void top_p_filter(std::vector<double>& logits, double p);

std::vector<double> softmax(std::span<const double> logits);

// Temperature, top-k, top-p, then a categorical draw. Temperature 0 is argmax.
// NumericError on NaN logits.
int sample_token(std::vector<double> logits, const CfgSchedule& cfg, std::mt19937_64& rng);

RESTOK_END_NAMESPACE
