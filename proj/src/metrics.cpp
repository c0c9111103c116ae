#include "restok/metrics.hpp"

#include <cmath>
#include <json.hpp>
#include <limits>

#include "restok/errors.hpp"

RESTOK_BEGIN_NAMESPACE

double codebook_entropy(std::span<const std::int64_t> counts, double eps) {
  long double total = 0;
  for (std::int64_t c : counts) {
    if (c < 0) throw MetricError("negative code count");
    total += static_cast<long double>(c);
  }
  if (total == 0) throw MetricError("codebook entropy of an all-zero usage histogram");
  double h = 0;
  for (std::int64_t c : counts) {
    const double p = static_cast<double>(static_cast<long double>(c) / total);
    h -= p * std::log2(p + eps);
  }
  return h;
}

double codebook_utilization(std::span<const std::int64_t> counts) {
  if (counts.empty()) return 0;
  std::size_t used = 0;
  for (std::int64_t c : counts) used += c > 0;
  return static_cast<double>(used) / static_cast<double>(counts.size());
}

PrefixReport eval_prefix_reconstruction(const TokenizerModel& model, const Dataset& data,
                                        const std::vector<int>& keep_lengths) {
  PrefixReport report;
  report.counts.assign(static_cast<std::size_t>(model.config().codebook_size), 0);
  for (int k : keep_lengths) report.rows.push_back({k, 0.0});
  for (const Tensor& image : data.images) {
    Tape tape(false);
    EncoderState enc = model.encode(tape, image);
    QuantizeResult q = model.quantize(tape, enc.latents);
    for (int c : q.codes) ++report.counts[static_cast<std::size_t>(c)];
    for (PrefixRow& row : report.rows) {
      const Tensor recon = model.decode(tape, q.zhat, row.keep_len, DecoderBranch::Image).value();
      double se = 0;
      for (std::size_t i = 0; i < recon.size(); ++i) {
        const double d = double(recon[i]) - double(image[i]);
        se += d * d;
      }
      row.mse += se / static_cast<double>(recon.size());
    }
  }
  if (!data.images.empty()) {
    for (PrefixRow& row : report.rows) row.mse /= static_cast<double>(data.images.size());
    report.entropy = codebook_entropy(report.counts);
    report.utilization = codebook_utilization(report.counts);
  }
  return report;
}

CentroidClassifier::CentroidClassifier(const MockVF& vf, const Dataset& reference) : vf_(vf) {
  centroids_.assign(static_cast<std::size_t>(reference.num_classes),
                    std::vector<double>(static_cast<std::size_t>(vf.dim()), 0.0));
  std::vector<int> n(static_cast<std::size_t>(reference.num_classes), 0);
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const Tensor g = vf.features(reference.images[i]).global;
    auto& c = centroids_[static_cast<std::size_t>(reference.labels[i])];
    for (std::size_t k = 0; k < c.size(); ++k) c[k] += g[k];
    ++n[static_cast<std::size_t>(reference.labels[i])];
  }
  for (std::size_t c = 0; c < centroids_.size(); ++c) {
    if (n[c] == 0) throw DataError("reference set has no image of class " + std::to_string(c));
    for (double& v : centroids_[c]) v /= n[c];
  }
}

int CentroidClassifier::predict(const Tensor& image) const {
  const Tensor g = vf_.features(image).global;
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids_.size(); ++c) {
    double d = 0;
    for (std::size_t k = 0; k < centroids_[c].size(); ++k) {
      const double diff = g[k] - centroids_[c][k];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

double CentroidClassifier::accuracy(const std::vector<Tensor>& images, const std::vector<int>& labels) const {
  if (images.empty()) return 0;
  int hits = 0;
  for (std::size_t i = 0; i < images.size(); ++i) hits += predict(images[i]) == labels[i];
  return static_cast<double>(hits) / static_cast<double>(images.size());
}

MetricsWriter::MetricsWriter(const std::string& path, bool append)
    : out_(path, append ? std::ios::app : std::ios::trunc) {
  if (!out_) throw DataError("cannot open metrics file " + path);
}

void MetricsWriter::write(int step, const std::vector<std::pair<std::string, double>>& values) {
  write("", step, values);
}

void MetricsWriter::write(const std::string& stage, int step,
                          const std::vector<std::pair<std::string, double>>& values) {
  if (stage != last_stage_) {
    last_stage_ = stage;
    last_step_ = -1;
  }
  if (step < last_step_) throw StateError("metrics step went backwards");
  last_step_ = step;
  if (!out_.is_open()) return;
  nlohmann::ordered_json j;
  if (!stage.empty()) j["stage"] = stage;
  j["step"] = step;
  for (const auto& [name, v] : values) j[name] = std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
  j["wall_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  out_ << j.dump() << "\n";
  out_.flush();
}

RESTOK_END_NAMESPACE
