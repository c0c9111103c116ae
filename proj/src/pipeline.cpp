#include "restok/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "restok/config_io.hpp"
#include "restok/errors.hpp"
#include "restok/image_io.hpp"

RESTOK_BEGIN_NAMESPACE

namespace fs = std::filesystem;

std::uint64_t stage_seed(std::uint64_t run_seed, const std::string& stage) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : stage) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  // splitmix64 finalizer
  std::uint64_t z = run_seed + 0x9e3779b97f4a7c15ULL * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

MockVF make_mock_vf(const TokenizerConfig& cfg) { return MockVF(cfg, 0x7f4a7c15ULL); }

Dataset train_dataset(const RunConfig& rc) {
  return gen_synthetic_dataset(rc.data.train_images, rc.tokenizer.image_size, rc.data.num_classes,
                               stage_seed(rc.seed, "train-data"));
}

Dataset eval_dataset(const RunConfig& rc) {
  return gen_synthetic_dataset(rc.data.eval_images, rc.tokenizer.image_size, rc.data.num_classes,
                               stage_seed(rc.seed, "eval-data"));
}

// ---------------------------------------------------------------- tokenizer

namespace {

AdamWConfig with_total(AdamWConfig cfg, int steps) {
  cfg.total_steps = std::max(1, steps);
  return cfg;
}

}  // namespace

TokenizerTrainer::TokenizerTrainer(TokenizerModel& model, const MockVF& vf, const RunConfig& rc,
                                   const Dataset& train)
    : model_(model),
      train_(train),
      weights_(rc.loss),
      dropout_(rc.dropout),
      sampler_(model.keep_lengths(), rc.dropout.full_keep_prob),
      optimizer_(with_total(rc.tokenizer_train.optim, rc.tokenizer_train.steps)),
      batch_size_(rc.tokenizer_train.batch_size) {
  if (train.size() == 0) throw DataError("tokenizer training set is empty");
  for (const Tensor& image : train.images) features_.push_back(vf.features(image));
}

TokenizerStepStats TokenizerTrainer::step(std::mt19937_64& rng) {
  ParameterStore& params = model_.params();
  params.zero_grad();
  TokenizerStepStats stats;
  const int full = model_.schedule().total();
  std::uniform_int_distribution<std::size_t> pick(0, train_.size() - 1);
  const Tensor seed = Tensor::scalar(Real(1) / static_cast<Real>(batch_size_));
  for (int b = 0; b < batch_size_; ++b) {
    const std::size_t i = pick(rng);
    const int keep_img = dropout_.enabled ? sampler_.sample(rng) : full;
    const int keep_vf = dropout_.enabled ? sampler_.sample(rng) : full;
    Tape tape;
    TokenizerLosses l = model_.forward_losses(tape, train_.images[i], features_[i], keep_img, keep_vf, weights_);
    tape.backward(l.total, seed);
    stats.total += l.total.value().item();
    stats.mse += l.mse.value().item();
    stats.vq += l.vq.value().item();
    stats.enc += l.enc.value().item();
    stats.dec += l.dec.value().item();
  }
  for (double* v : {&stats.total, &stats.mse, &stats.vq, &stats.enc, &stats.dec}) *v /= batch_size_;
  if (!std::isfinite(stats.total)) {
    throw NumericError("tokenizer loss is not finite at step " + std::to_string(steps_taken()) +
                       " (mse " + std::to_string(stats.mse) + ", vq " + std::to_string(stats.vq) + ")");
  }
  stats.lr = optimizer_.step(params);
  return stats;
}

TrainSummary train_tokenizer(TokenizerModel& model, const MockVF& vf, const Dataset& train,
                             const RunConfig& rc, MetricsWriter& metrics) {
  if (rc.tokenizer.codebook_data_init && rc.tokenizer_train.steps > 0) {
    model.init_codebook_from_data(train.images, stage_seed(rc.seed, "codebook-init"));
  }
  TokenizerTrainer trainer(model, vf, rc, train);
  std::mt19937_64 rng(stage_seed(rc.seed, "tokenizer-train"));
  const auto start = std::chrono::steady_clock::now();
  TrainSummary summary;
  const TrainConfig& tc = rc.tokenizer_train;
  for (int s = 0; s < tc.steps; ++s) {
    const TokenizerStepStats st = trainer.step(rng);
    summary.steps = s + 1;
    summary.final_loss = st.total;
    summary.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (tc.log_every > 0 && (s % tc.log_every == 0 || s + 1 == tc.steps)) {
      metrics.write("tokenizer", s, {{"loss", st.total}, {"mse", st.mse}, {"vq", st.vq},
                                     {"l_enc", st.enc}, {"l_dec", st.dec}, {"lr", st.lr}});
      spdlog::info("tokenizer step {} loss {:.5f} mse {:.5f} vq {:.5f} lr {:.2e}", s, st.total, st.mse,
                   st.vq, st.lr);
    }
    if (tc.time_budget_s > 0 && summary.wall_s > tc.time_budget_s) {
      spdlog::warn("tokenizer training stopped by the time budget after {} steps", summary.steps);
      break;
    }
  }
  return summary;
}

std::vector<TokenRecord> dump_codes(const TokenizerModel& model, const Dataset& data) {
  std::vector<TokenRecord> out;
  for (std::size_t i = 0; i < data.size(); ++i) out.push_back({data.labels[i], model.tokenize(data.images[i])});
  return out;
}

// ---------------------------------------------------------------- generator

TrainSummary train_generator(GeneratorModel& model, const std::vector<TokenRecord>& records,
                             const RunConfig& rc, MetricsWriter& metrics) {
  if (records.empty()) throw DataError("no token records to train on");
  const GeneratorConfig& g = model.config();
  std::vector<HarBatch> prepared;
  for (const TokenRecord& r : records) {
    prepared.push_back(build_har_batch(r.codes, r.class_id, model.schedule(), g.ntp_tokens,
                                       model.codebook_size(), g.num_classes));
  }
  const TrainConfig& tc = rc.generator_train;
  AdamW optimizer(with_total(tc.optim, tc.steps));
  std::mt19937_64 rng(stage_seed(rc.seed, "generator-train"));
  std::uniform_int_distribution<std::size_t> pick(0, prepared.size() - 1);
  std::bernoulli_distribution drop_class(g.class_dropout);
  const int null_input = model.codebook_size() + model.null_class();
  const auto start = std::chrono::steady_clock::now();
  TrainSummary summary;
  for (int s = 0; s < tc.steps; ++s) {
    std::vector<HarBatch> batch;
    for (int b = 0; b < tc.batch_size; ++b) {
      batch.push_back(prepared[pick(rng)]);
      if (drop_class(rng)) batch.back().inputs[0] = null_input;
    }
    const GeneratorStepStats st = generator_train_step(model, optimizer, batch);
    summary.steps = s + 1;
    summary.final_loss = st.loss;
    summary.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (tc.log_every > 0 && (s % tc.log_every == 0 || s + 1 == tc.steps)) {
      metrics.write("generator", s, {{"loss", st.loss}, {"grad_norm", st.grad_norm}, {"lr", st.lr}});
      spdlog::info("generator step {} loss {:.4f} lr {:.2e}", s, st.loss, st.lr);
    }
    if (tc.time_budget_s > 0 && summary.wall_s > tc.time_budget_s) {
      spdlog::warn("generator training stopped by the time budget after {} steps", summary.steps);
      break;
    }
  }
  return summary;
}

std::vector<GeneratedSample> generate_samples(const GeneratorModel& generator,
                                              const TokenizerModel& tokenizer, int per_class,
                                              SampleMode mode, const CfgSchedule& cfg,
                                              std::uint64_t seed) {
  std::vector<GeneratedSample> out;
  std::mt19937_64 rng(seed);
  for (int c = 0; c < generator.config().num_classes; ++c) {
    for (int n = 0; n < per_class; ++n) {
      SampleResult r = generator.sample(c, mode, cfg, rng);
      Tensor image = tokenizer.decode_codes(r.codes);
      out.push_back({c, std::move(r.codes), std::move(image)});
    }
  }
  return out;
}

// ---------------------------------------------------------------- stages

std::string tokenizer_checkpoint_path(const RunConfig& rc) { return (fs::path(rc.out_dir) / "tokenizer.ckpt").string(); }
std::string codes_path(const RunConfig& rc) { return (fs::path(rc.out_dir) / "codes.bin").string(); }
std::string generator_checkpoint_path(const RunConfig& rc) { return (fs::path(rc.out_dir) / "generator.ckpt").string(); }
std::string samples_path(const RunConfig& rc) { return (fs::path(rc.out_dir) / "samples.bin").string(); }
std::string metrics_path(const RunConfig& rc) { return (fs::path(rc.out_dir) / "metrics.jsonl").string(); }

namespace {

void require_artifact(const std::string& path, const char* produced_by) {
  if (!fs::exists(path)) {
    throw StageError("missing artifact " + path + " (run `" + produced_by + "` first)");
  }
}

TokenizerModel load_tokenizer(const RunConfig& rc) {
  require_artifact(tokenizer_checkpoint_path(rc), "train-tokenizer");
  TokenizerModel model(rc.tokenizer, stage_seed(rc.seed, "tokenizer-init"));
  load_checkpoint(tokenizer_checkpoint_path(rc), model.params(), tokenizer_digest(rc.tokenizer));
  return model;
}

GeneratorModel load_generator(const RunConfig& rc) {
  require_artifact(generator_checkpoint_path(rc), "train-generator");
  GeneratorModel model(rc.generator, rc.tokenizer.schedule(), rc.tokenizer.codebook_size,
                       stage_seed(rc.seed, "generator-init"));
  load_checkpoint(generator_checkpoint_path(rc), model.params(), generator_digest(rc.generator, rc.tokenizer));
  return model;
}

void prepare_out_dir(const RunConfig& rc) {
  fs::create_directories(rc.out_dir);
  save_run_config((fs::path(rc.out_dir) / "config.json").string(), rc);
}

}  // namespace

void run_train_tokenizer(const RunConfig& rc) {
  rc.validate();
  prepare_out_dir(rc);
  TokenizerModel model(rc.tokenizer, stage_seed(rc.seed, "tokenizer-init"));
  const MockVF vf = make_mock_vf(rc.tokenizer);
  const Dataset train = train_dataset(rc);
  MetricsWriter metrics(metrics_path(rc), true);
  spdlog::info("tokenizer: {} parameters, {} latent tokens, {} training images",
               model.params().scalar_count(), model.schedule().total(), train.size());
  const TrainSummary s = train_tokenizer(model, vf, train, rc, metrics);
  save_checkpoint(tokenizer_checkpoint_path(rc), model.params(), tokenizer_digest(rc.tokenizer));
  spdlog::info("tokenizer: {} steps in {:.1f}s, saved {}", s.steps, s.wall_s, tokenizer_checkpoint_path(rc));
}

void run_dump_codes(const RunConfig& rc) {
  rc.validate();
  const TokenizerModel model = load_tokenizer(rc);
  const std::vector<TokenRecord> records = dump_codes(model, train_dataset(rc));
  write_token_dump(codes_path(rc), records);
  spdlog::info("dump-codes: wrote {} records to {}", records.size(), codes_path(rc));
}

void run_train_generator(const RunConfig& rc) {
  rc.validate();
  require_artifact(codes_path(rc), "dump-codes");
  const std::vector<TokenRecord> records = read_token_dump(codes_path(rc));
  GeneratorModel model(rc.generator, rc.tokenizer.schedule(), rc.tokenizer.codebook_size,
                       stage_seed(rc.seed, "generator-init"));
  MetricsWriter metrics(metrics_path(rc), true);
  const TrainSummary s = train_generator(model, records, rc, metrics);
  save_checkpoint(generator_checkpoint_path(rc), model.params(), generator_digest(rc.generator, rc.tokenizer));
  spdlog::info("generator: {} steps in {:.1f}s, final loss {:.4f}", s.steps, s.wall_s, s.final_loss);
}

void run_sample(const RunConfig& rc) {
  rc.validate();
  const TokenizerModel tokenizer = load_tokenizer(rc);
  const GeneratorModel generator = load_generator(rc);
  const auto samples = generate_samples(generator, tokenizer, rc.samples_per_class, SampleMode::Har, rc.cfg,
                                        stage_seed(rc.seed, "sample"));
  const fs::path dir = fs::path(rc.out_dir) / "samples";
  fs::create_directories(dir);
  std::vector<TokenRecord> records;
  std::vector<Tensor> images;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    char name[64];
    std::snprintf(name, sizeof name, "class%02d_%03zu.ppm", s.class_id, i);
    write_ppm((dir / name).string(), s.image);
    records.push_back({s.class_id, s.codes});
    images.push_back(s.image);
  }
  if (!images.empty()) write_ppm((dir / "grid.ppm").string(), tile_images(images, std::max(1, rc.samples_per_class)));
  write_token_dump(samples_path(rc), records);
  spdlog::info("sample: wrote {} images to {}", samples.size(), dir.string());
}

void run_eval(const RunConfig& rc) {
  rc.validate();
  const TokenizerModel tokenizer = load_tokenizer(rc);
  const Dataset eval = eval_dataset(rc);
  const PrefixReport report = eval_prefix_reconstruction(tokenizer, eval, tokenizer.keep_lengths());
  nlohmann::ordered_json j;
  for (const PrefixRow& row : report.rows) {
    j["prefix_mse"].push_back({{"keep_len", row.keep_len}, {"mse", row.mse}});
  }
  j["codebook_entropy_bits"] = report.entropy;
  j["codebook_utilization"] = report.utilization;
  std::vector<std::pair<std::string, double>> values;
  for (const PrefixRow& row : report.rows) values.push_back({"mse@" + std::to_string(row.keep_len), row.mse});
  values.push_back({"entropy", report.entropy});
  values.push_back({"utilization", report.utilization});
  if (fs::exists(samples_path(rc))) {
    const std::vector<TokenRecord> samples = read_token_dump(samples_path(rc));
    const MockVF vf = make_mock_vf(rc.tokenizer);
    const CentroidClassifier clf(vf, train_dataset(rc));
    std::vector<Tensor> images;
    std::vector<int> labels;
    for (const TokenRecord& r : samples) {
      images.push_back(tokenizer.decode_codes(r.codes));
      labels.push_back(r.class_id);
    }
    const double acc = clf.accuracy(images, labels);
    j["sample_class_accuracy"] = acc;
    values.push_back({"sample_accuracy", acc});
  }
  std::ofstream((fs::path(rc.out_dir) / "eval.json").string()) << j.dump(2) << "\n";
  MetricsWriter metrics(metrics_path(rc), true);
  metrics.write("eval", 0, values);
  for (const PrefixRow& row : report.rows) spdlog::info("eval: keep {:>4} mse {:.6f}", row.keep_len, row.mse);
  spdlog::info("eval: codebook entropy {:.3f} bits, utilization {:.3f}", report.entropy, report.utilization);
}

void run_inspect_mask(const RunConfig& rc, const std::string& which, MaskFormat format, std::ostream& os) {
  rc.validate();
  const LevelSchedule schedule = rc.tokenizer.schedule();
  TokenLayout layout;
  if (which == "generator") {
    const HarPlan plan = har_plan(schedule, rc.generator.ntp_tokens);
    layout = generator_layout(plan.ntp, plan.group_sizes);
  } else if (which == "encoder") {
    const ScalePyramid pyramid = rc.tokenizer.pyramid();
    layout = encoder_layout(pyramid, pyramid.count(), schedule);
  } else if (which == "decoder") {
    layout = decoder_layout({rc.tokenizer.grid(), rc.tokenizer.grid()}, schedule.total(), schedule.total());
  } else {
    throw ConfigError("unknown mask '" + which + "' (expected generator, encoder or decoder)");
  }
  write_mask(os, *layout.mask, format);
}

RESTOK_END_NAMESPACE
