#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "restok/dataset.hpp"
#include "restok/tokenizer.hpp"

RESTOK_BEGIN_NAMESPACE

// Shannon entropy in bits, -sum p log2(p + eps). MetricError when every count is zero.
double codebook_entropy(std::span<const std::int64_t> counts, double eps = 1e-8);
// Fraction of codes used at least once.
double codebook_utilization(std::span<const std::int64_t> counts);

struct PrefixRow {
  int keep_len = 0;
  double mse = 0;
};

struct PrefixReport {
  std::vector<PrefixRow> rows;
  double entropy = 0;
  double utilization = 0;
  std::vector<std::int64_t> counts;
};

// Mean pixel MSE per keep length plus code statistics over the full-length pass.
PrefixReport eval_prefix_reconstruction(const TokenizerModel& model, const Dataset& data,
                                        const std::vector<int>& keep_lengths);

// Nearest class centroid in MockVF global-feature space.
class CentroidClassifier {
 public:
  CentroidClassifier(const MockVF& vf, const Dataset& reference);
  int predict(const Tensor& image) const;
  double accuracy(const std::vector<Tensor>& images, const std::vector<int>& labels) const;

 private:
  const MockVF& vf_;
  std::vector<std::vector<double>> centroids_;
};

// Line-delimited JSON metrics: {"step": n, "wall_s": t, name: value, ...}.
// Steps must not decrease.
class MetricsWriter {
 public:
  MetricsWriter() = default;  // discards records
  explicit MetricsWriter(const std::string& path, bool append = false);

  void write(int step, const std::vector<std::pair<std::string, double>>& values);
  void write(const std::string& stage, int step, const std::vector<std::pair<std::string, double>>& values);
  int last_step() const { return last_step_; }

 private:
  std::ofstream out_;
  int last_step_ = -1;
  std::string last_stage_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

RESTOK_END_NAMESPACE
