#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "restok/checkpoint.hpp"
#include "restok/config.hpp"
#include "restok/dataset.hpp"
#include "restok/dropout.hpp"
#include "restok/generator.hpp"
#include "restok/metrics.hpp"
#include "restok/tokenizer.hpp"

RESTOK_BEGIN_NAMESPACE

// Independent seed for a named stage of a run.
std::uint64_t stage_seed(std::uint64_t run_seed, const std::string& stage);

// The frozen alignment network is part of the tokenizer geometry, not the run.
MockVF make_mock_vf(const TokenizerConfig& cfg);

Dataset train_dataset(const RunConfig& rc);
Dataset eval_dataset(const RunConfig& rc);

struct TokenizerStepStats {
  double total = 0;
  double mse = 0;
  double vq = 0;
  double enc = 0;
  double dec = 0;
  double lr = 0;
};

class TokenizerTrainer {
 public:
  TokenizerTrainer(TokenizerModel& model, const MockVF& vf, const RunConfig& rc, const Dataset& train);

  // One AdamW step on a batch drawn with replacement; keep lengths are drawn
  // per sample, separately for the image and feature branches.
  TokenizerStepStats step(std::mt19937_64& rng);
  int steps_taken() const { return optimizer_.steps_taken(); }

 private:
  TokenizerModel& model_;
  const Dataset& train_;
  std::vector<MockVF::Features> features_;
  LossWeights weights_;
  DropoutConfig dropout_;
  KeepLengthSampler sampler_;
  AdamW optimizer_;
  int batch_size_;
};

struct TrainSummary {
  int steps = 0;
  double wall_s = 0;
  double final_loss = 0;
};

TrainSummary train_tokenizer(TokenizerModel& model, const MockVF& vf, const Dataset& train,
                             const RunConfig& rc, MetricsWriter& metrics);

std::vector<TokenRecord> dump_codes(const TokenizerModel& model, const Dataset& data);

TrainSummary train_generator(GeneratorModel& model, const std::vector<TokenRecord>& records,
                             const RunConfig& rc, MetricsWriter& metrics);

struct GeneratedSample {
  int class_id = 0;
  std::vector<int> codes;
  Tensor image;
};

std::vector<GeneratedSample> generate_samples(const GeneratorModel& generator,
                                              const TokenizerModel& tokenizer, int per_class,
                                              SampleMode mode, const CfgSchedule& cfg,
                                              std::uint64_t seed);

// CLI stages. Artifacts live in rc.out_dir; a missing prerequisite raises
// StageError naming the file.
void run_train_tokenizer(const RunConfig& rc);
void run_dump_codes(const RunConfig& rc);
void run_train_generator(const RunConfig& rc);
void run_sample(const RunConfig& rc);
void run_eval(const RunConfig& rc);
void run_inspect_mask(const RunConfig& rc, const std::string& which, MaskFormat format, std::ostream& os);

// Artifact paths inside an output directory.
std::string tokenizer_checkpoint_path(const RunConfig& rc);
std::string codes_path(const RunConfig& rc);
std::string generator_checkpoint_path(const RunConfig& rc);
std::string samples_path(const RunConfig& rc);
std::string metrics_path(const RunConfig& rc);

RESTOK_END_NAMESPACE
