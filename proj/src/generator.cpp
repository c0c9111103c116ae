#include "restok/generator.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "restok/errors.hpp"
#include "restok/ops.hpp"

RESTOK_BEGIN_NAMESPACE

HarPlan har_plan(const LevelSchedule& schedule, int ntp_tokens) {
  const int total = schedule.total();
  int first_level = 0;
  if (ntp_tokens != 0) {
    auto it = std::find(schedule.cumulative.begin(), schedule.cumulative.end(), ntp_tokens);
    if (it == schedule.cumulative.end()) {
      throw ConfigError("ntp length " + std::to_string(ntp_tokens) + " is not a level boundary");
    }
    first_level = static_cast<int>(it - schedule.cumulative.begin()) + 1;
  }
  HarPlan plan;
  plan.ntp = ntp_tokens;
  for (int l = first_level; l < schedule.count(); ++l) {
    plan.levels.push_back(l);
    plan.group_sizes.push_back(schedule.sizes[static_cast<std::size_t>(l)]);
  }
  plan.length = 1 + ntp_tokens + (total - ntp_tokens);
  const auto n = static_cast<std::size_t>(plan.length);
  plan.source_code.assign(n, -1);
  plan.mask_slot.assign(n, -1);
  plan.predicts.assign(n, -1);
  plan.position.assign(n, 0);

  // class row and teacher-forced codes
  if (ntp_tokens > 0) plan.predicts[0] = 0;
  for (int i = 1; i <= ntp_tokens; ++i) {
    plan.source_code[static_cast<std::size_t>(i)] = i - 1;
    plan.position[static_cast<std::size_t>(i)] = i;
    if (i < ntp_tokens) plan.predicts[static_cast<std::size_t>(i)] = i;
  }
  for (int i = 0; i < ntp_tokens; ++i) plan.passes.push_back({i, i + 1, i, i});

  int row = 1 + ntp_tokens;
  for (std::size_t g = 0; g < plan.levels.size(); ++g) {
    const int l = plan.levels[g];
    const int size = plan.group_sizes[g];
    const int prev_size = l > 0 ? schedule.sizes[static_cast<std::size_t>(l - 1)] : 0;
    const int prev_offset = l > 0 ? schedule.offset(l - 1) : 0;
    for (int j = 0; j < size; ++j) {
      const auto r = static_cast<std::size_t>(row + j);
      if (j < prev_size) {
        plan.source_code[r] = prev_offset + j;
      } else {
        plan.mask_slot[r] = j;
      }
      plan.predicts[r] = schedule.offset(l) + j;
      plan.position[r] = schedule.offset(l) + j;
    }
    const int begin = g == 0 ? row - 1 : row;
    plan.passes.push_back({begin, row + size, row, schedule.offset(l)});
    row += size;
  }
  return plan;
}

HarBatch build_har_batch(std::span<const int> codes, int class_id, const LevelSchedule& schedule,
                         int ntp_tokens, int codebook_size, int num_classes) {
  if (static_cast<int>(codes.size()) != schedule.total()) {
    throw DataError("code sequence has " + std::to_string(codes.size()) + " entries, schedule needs " +
                    std::to_string(schedule.total()));
  }
  if (class_id < 0 || class_id > num_classes) throw DataError("class id out of range");
  for (int c : codes) {
    if (c < 0 || c >= codebook_size) throw DataError("code id " + std::to_string(c) + " out of range");
  }
  const HarPlan plan = har_plan(schedule, ntp_tokens);
  HarBatch b;
  const int mask_base = codebook_size + num_classes + 1;
  for (int r = 0; r < plan.length; ++r) {
    const auto i = static_cast<std::size_t>(r);
    if (r == 0) {
      b.inputs.push_back(codebook_size + class_id);
    } else if (plan.source_code[i] >= 0) {
      b.inputs.push_back(codes[static_cast<std::size_t>(plan.source_code[i])]);
    } else {
      b.inputs.push_back(mask_base + plan.mask_slot[i]);
    }
    b.positions.push_back(plan.position[i]);
    b.targets.push_back(plan.predicts[i] >= 0 ? codes[static_cast<std::size_t>(plan.predicts[i])] : -1);
  }
  b.layout = generator_layout(plan.ntp, plan.group_sizes);
  return b;
}

GeneratorModel::GeneratorModel(const GeneratorConfig& cfg, const LevelSchedule& schedule,
                               int codebook_size, std::uint64_t seed)
    : cfg_(cfg), schedule_(schedule), codebook_size_(codebook_size) {
  cfg_.validate(schedule_);
  if (codebook_size_ < 1) throw ConfigError("generator needs a non-empty codebook");
  mask_slots_ = *std::max_element(schedule_.sizes.begin(), schedule_.sizes.end());
  std::mt19937_64 rng(seed);
  const int d = cfg_.width;
  const Real std02 = Real(0.02);
  token_emb_ = &store_.add("gen.token_emb", normal_tensor({codebook_size_, d}, std02, rng));
  class_emb_ = &store_.add("gen.class_emb", normal_tensor({cfg_.num_classes + 1, d}, std02, rng));
  mask_emb_ = &store_.add("gen.mask_emb", normal_tensor({mask_slots_, d}, std02, rng));
  pos_emb_ = &store_.add("gen.pos_emb", normal_tensor({schedule_.total() + 1, d}, std02, rng));
  for (int n = 0; n < cfg_.depth; ++n) {
    blocks_.push_back(make_block(store_, "gen.block." + std::to_string(n), d, d * cfg_.mlp_ratio,
                                 cfg_.depth, rng));
  }
  norm_ = make_layer_norm(store_, "gen.norm", d);
  head_ = make_linear(store_, "gen.head", d, codebook_size_, std02, rng);
}

void GeneratorModel::validate_class(int class_id) const {
  if (class_id < 0 || class_id > cfg_.num_classes) {
    throw DataError("class id " + std::to_string(class_id) + " out of range");
  }
}

Var GeneratorModel::embed(Tape& tape, std::span<const int> inputs, std::span<const int> positions) const {
  Var table = concat_rows({tape.parameter(*token_emb_), tape.parameter(*class_emb_),
                           tape.parameter(*mask_emb_)});
  return add(gather_rows(table, inputs), gather_rows(tape.parameter(*pos_emb_), positions));
}

Var GeneratorModel::forward(Tape& tape, const HarBatch& batch) const {
  Var x = embed(tape, batch.inputs, batch.positions);
  const AttentionContext ctx{batch.layout.mask, nullptr, cfg_.heads};
  for (const BlockParams& block : blocks_) {
    x = attention_sublayer(tape, block, x, ctx);
    x = mlp_sublayer(tape, block, x);
  }
  return apply(tape, head_, apply(tape, norm_, x));
}

Var GeneratorModel::loss(Tape& tape, const HarBatch& batch) const {
  return cross_entropy(forward(tape, batch), batch.targets);
}

SampleResult GeneratorModel::sample(int class_id, SampleMode mode, const CfgSchedule& cfg,
                                    std::mt19937_64& rng) const {
  validate_class(class_id);
  cfg.validate();
  const int total = schedule_.total();
  const HarPlan plan = har_plan(schedule_, mode == SampleMode::Vanilla ? total : cfg_.ntp_tokens);
  const TokenLayout layout = generator_layout(plan.ntp, plan.group_sizes);
  const bool guided = cfg.kind != CfgKind::Off;
  const int mask_base = codebook_size_ + cfg_.num_classes + 1;

  SampleResult result;
  result.codes.assign(static_cast<std::size_t>(total), -1);
  std::vector<KvCache> cond_cache(blocks_.size()), uncond_cache(blocks_.size());

  auto run = [&](int cls, int begin, int end, std::vector<KvCache>& caches) {
    std::vector<int> inputs, positions;
    for (int r = begin; r < end; ++r) {
      const auto i = static_cast<std::size_t>(r);
      if (r == 0) {
        inputs.push_back(codebook_size_ + cls);
      } else if (plan.source_code[i] >= 0) {
        inputs.push_back(result.codes[static_cast<std::size_t>(plan.source_code[i])]);
      } else {
        inputs.push_back(mask_base + plan.mask_slot[i]);
      }
      positions.push_back(plan.position[i]);
    }
    Tape tape(false);
    Var x = embed(tape, inputs, positions);
    auto mask = std::make_shared<const BoolMatrix>(layout.mask->block(begin, end - begin, 0, end));
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      x = cached_attention_sublayer(tape, blocks_[b], x, caches[b], mask, cfg_.heads);
      x = mlp_sublayer(tape, blocks_[b], x);
    }
    return apply(tape, head_, apply(tape, norm_, x)).value();
  };

  const int steps = static_cast<int>(plan.passes.size());
  for (int p = 0; p < steps; ++p) {
    const HarPlan::Pass& pass = plan.passes[static_cast<std::size_t>(p)];
    const Tensor cond = run(class_id, pass.begin, pass.end, cond_cache);
    Tensor uncond;
    if (guided) uncond = run(null_class(), pass.begin, pass.end, uncond_cache);
    const double scale = cfg_scale_at(p, steps, cfg);
    const int k = codebook_size_;
    for (int r = pass.predict_begin; r < pass.end; ++r) {
      const int local = r - pass.begin;
      const std::span<const Real> c(cond.data() + std::size_t(local) * k, static_cast<std::size_t>(k));
      std::vector<double> logits;
      if (guided) {
        const std::span<const Real> u(uncond.data() + std::size_t(local) * k, static_cast<std::size_t>(k));
        logits = guided_logits(c, u, scale);
      } else {
        logits.assign(c.begin(), c.end());
      }
      const int target = plan.predicts[static_cast<std::size_t>(r)];
      result.codes[static_cast<std::size_t>(target)] = sample_token(std::move(logits), cfg, rng);
    }
    ++result.forward_passes;
  }
  return result;
}

GeneratorStepStats generator_train_step(GeneratorModel& model, AdamW& optimizer,
                                        const std::vector<HarBatch>& batch) {
  if (batch.empty()) throw DataError("empty generator batch");
  ParameterStore& params = model.params();
  params.zero_grad();
  GeneratorStepStats stats;
  const Tensor seed = Tensor::scalar(Real(1) / static_cast<Real>(batch.size()));
  for (const HarBatch& item : batch) {
    Tape tape;
    Var l = model.loss(tape, item);
    stats.loss += l.value().item();
    tape.backward(l, seed);
  }
  stats.loss /= static_cast<double>(batch.size());
  if (!std::isfinite(stats.loss)) {
    throw NumericError("generator loss is not finite at step " + std::to_string(optimizer.steps_taken()));
  }
  double sq = 0;
  for (const Parameter* p : params.all()) {
    for (Real g : p->grad.values()) sq += double(g) * double(g);
  }
  stats.grad_norm = std::sqrt(sq);
  stats.lr = optimizer.step(params);
  return stats;
}

RESTOK_END_NAMESPACE
