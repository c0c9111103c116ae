#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "restok/config.hpp"
#include "restok/layout.hpp"
#include "restok/optim.hpp"
#include "restok/sampling.hpp"
#include "restok/transformer.hpp"

RESTOK_BEGIN_NAMESPACE

enum class SampleMode { Har, Vanilla };

// One training sequence. Inputs index a joint embedding table laid out as
// [codes | classes (last = null class) | mask slots].
struct HarBatch {
  std::vector<int> inputs;
  std::vector<int> positions;  // learned absolute position ids
  std::vector<int> targets;    // -1 where nothing is predicted
  TokenLayout layout;
};

// Sequence plan shared by training and sampling. Class token first, then
// `ntp` teacher-forced codes, then one group per remaining level. Slot j of
// the group predicting level l reads code j of level l-1 when it exists and
// mask slot j otherwise.
struct HarPlan {
  int ntp = 0;
  std::vector<int> levels;       // level index predicted by each group
  std::vector<int> group_sizes;
  int length = 0;                // sequence length including the class token
  // Forward passes: each feeds sequence rows [begin, end) and reads logits at
  // rows [predict_begin, end) (the first pass also predicts from the class row).
  struct Pass {
    int begin = 0;
    int end = 0;
    int predict_begin = 0;
    int first_code = 0;  // code index predicted by row predict_begin
  };
  std::vector<Pass> passes;
  // Per sequence row: code index fed (-1 for class or mask rows), mask slot
  // fed (-1 otherwise), code index predicted (-1 for none), position id.
  std::vector<int> source_code;
  std::vector<int> mask_slot;
  std::vector<int> predicts;
  std::vector<int> position;
};

HarPlan har_plan(const LevelSchedule& schedule, int ntp_tokens);

// Builds inputs/targets for one image's codes. DataError on length mismatch.
HarBatch build_har_batch(std::span<const int> codes, int class_id, const LevelSchedule& schedule,
                         int ntp_tokens, int codebook_size, int num_classes);

struct SampleResult {
  std::vector<int> codes;
  int forward_passes = 0;
};

class GeneratorModel {
 public:
  GeneratorModel(const GeneratorConfig& cfg, const LevelSchedule& schedule, int codebook_size,
                 std::uint64_t seed);

  const GeneratorConfig& config() const { return cfg_; }
  const LevelSchedule& schedule() const { return schedule_; }
  int codebook_size() const { return codebook_size_; }
  int null_class() const { return cfg_.num_classes; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  // Logits [sequence x K] for a full teacher-forced sequence.
  Var forward(Tape& tape, const HarBatch& batch) const;
  Var loss(Tape& tape, const HarBatch& batch) const;

  // Incremental sampling with key/value caches. Each pass counts once even
  // when guidance also runs the unconditional stream.
  SampleResult sample(int class_id, SampleMode mode, const CfgSchedule& cfg,
                      std::mt19937_64& rng) const;

 private:
  Var embed(Tape& tape, std::span<const int> inputs, std::span<const int> positions) const;
  void validate_class(int class_id) const;

  GeneratorConfig cfg_;
  LevelSchedule schedule_;
  int codebook_size_ = 0;
  int mask_slots_ = 0;
  ParameterStore store_;
  Parameter* token_emb_ = nullptr;
  Parameter* class_emb_ = nullptr;
  Parameter* mask_emb_ = nullptr;
  Parameter* pos_emb_ = nullptr;
  std::vector<BlockParams> blocks_;
  LayerNormParams norm_;
  LinearParams head_;
};

struct GeneratorStepStats {
  double loss = 0;
  double lr = 0;
  double grad_norm = 0;
};

// Mean cross-entropy over the batch, one AdamW update.
GeneratorStepStats generator_train_step(GeneratorModel& model, AdamW& optimizer,
                                        const std::vector<HarBatch>& batch);

RESTOK_END_NAMESPACE
