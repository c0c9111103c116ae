#include "restok/dropout.hpp"

#include <algorithm>
#include <string>

#include "restok/errors.hpp"

RESTOK_BEGIN_NAMESPACE

KeepLengthSampler::KeepLengthSampler(std::vector<int> lengths, double full_prob)
    : lengths_(std::move(lengths)) {
  if (lengths_.empty()) throw ConfigError("keep-length sampler needs at least one length");
  if (!std::is_sorted(lengths_.begin(), lengths_.end())) throw ConfigError("keep lengths must be ascending");
  if (!(full_prob >= 0 && full_prob <= 1)) throw ConfigError("full keep probability must lie in [0, 1]");
  const std::size_t n = lengths_.size();
  probs_.assign(n, 0.0);
  if (n == 1) {
    probs_[0] = 1.0;
  } else {
    probs_[n - 1] = full_prob;
    // weights 1/2, 1/4, ... walking down from the second-longest length
    double weight = 0.5, weight_sum = 0;
    std::vector<double> w(n - 1);
    for (std::size_t i = n - 1; i-- > 0;) {
      w[i] = weight;
      weight_sum += weight;
      weight *= 0.5;
    }
    for (std::size_t i = 0; i + 1 < n; ++i) probs_[i] = (1.0 - full_prob) * w[i] / weight_sum;
  }
  double acc = 0;
  for (double p : probs_) {
    acc += p;
    cumulative_.push_back(acc);
  }
}

KeepLengthSampler::KeepLengthSampler(const LevelSchedule& schedule, int min_tokens, double full_prob)
    : KeepLengthSampler(keep_lengths(schedule, min_tokens), full_prob) {}

int KeepLengthSampler::sample(std::mt19937_64& rng) const {
  const double u = std::uniform_real_distribution<double>(0.0, cumulative_.back())(rng);
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  if (it == cumulative_.end()) --it;
  return lengths_[static_cast<std::size_t>(it - cumulative_.begin())];
}

double KeepLengthSampler::probability(int length) const {
  auto it = std::find(lengths_.begin(), lengths_.end(), length);
  if (it == lengths_.end()) return 0.0;
  return probs_[static_cast<std::size_t>(it - lengths_.begin())];
}

RESTOK_END_NAMESPACE
