#pragma once

#include <random>
#include <vector>

#include "restok/geometry.hpp"

RESTOK_BEGIN_NAMESPACE

// Nested token dropout. The full length keeps `full_prob`; each shorter
// allowed length gets half the mass of the next longer one, and the halving
// weights share the remaining 1 - full_prob.
class KeepLengthSampler {
 public:
  KeepLengthSampler(std::vector<int> lengths, double full_prob);
  KeepLengthSampler(const LevelSchedule& schedule, int min_tokens, double full_prob);

  int sample(std::mt19937_64& rng) const;
  const std::vector<int>& lengths() const { return lengths_; }
  const std::vector<double>& probabilities() const { return probs_; }
  double probability(int length) const;

 private:
  std::vector<int> lengths_;  // ascending
  std::vector<double> probs_;
  std::vector<double> cumulative_;
};

RESTOK_END_NAMESPACE
