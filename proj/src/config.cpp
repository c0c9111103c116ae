#include "restok/config.hpp"

#include <string>

#include "restok/errors.hpp"
#include "restok/ops.hpp"

RESTOK_BEGIN_NAMESPACE

namespace {

void require_positive(int value, const char* name) {
  if (value < 1) throw ConfigError(std::string(name) + " must be positive, got " + std::to_string(value));
}

void require_unit(double value, const char* name) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw ConfigError(std::string(name) + " must lie in [0, 1], got " + std::to_string(value));
  }
}

}  // namespace

void TokenizerConfig::validate() const {
  require_positive(image_size, "tokenizer.image_size");
  require_positive(channels, "tokenizer.channels");
  require_positive(patch, "tokenizer.patch");
  require_positive(scales, "tokenizer.scales");
  require_positive(pool_factor, "tokenizer.pool_factor");
  require_positive(levels, "tokenizer.levels");
  require_positive(depth, "tokenizer.depth");
  require_positive(decoder_depth, "tokenizer.decoder_depth");
  require_positive(width, "tokenizer.width");
  require_positive(heads, "tokenizer.heads");
  require_positive(mlp_ratio, "tokenizer.mlp_ratio");
  require_positive(codebook_size, "tokenizer.codebook_size");
  require_positive(code_dim, "tokenizer.code_dim");
  require_positive(vf_dim, "tokenizer.vf_dim");
  require_positive(vf_hidden, "tokenizer.vf_hidden");
  if (commitment < 0) throw ConfigError("tokenizer.commitment must be non-negative");
  if (image_size % patch != 0) {
    throw GeometryError("image size " + std::to_string(image_size) + " not divisible by patch " +
                        std::to_string(patch));
  }
  if (width % heads != 0) throw ConfigError("tokenizer.width must be divisible by tokenizer.heads");
  const int head_dim = width / heads;
  const RotarySections sec = rotary_sections(head_dim);
  if (head_dim % 2 != 0 || sec.x < 1) {
    throw ConfigError("head width " + std::to_string(head_dim) +
                      " too small for three rotary sections");
  }
  pyramid();  // throws on divisibility problems
  const LevelSchedule sched = schedule();
  const GridShape last = sched.levels.back();
  if (grid() % last.h != 0 || grid() % last.w != 0) {
    throw GeometryError("base grid " + std::to_string(grid()) + " not divisible by latent level " +
                        std::to_string(last.h) + "x" + std::to_string(last.w));
  }
  keep_lengths(sched, min_tokens);
  const int stride = (depth + scales - 1) / scales;
  if (stride * (scales - 1) > depth - 1) {
    throw ConfigError("depth " + std::to_string(depth) + " leaves no room for " +
                      std::to_string(scales - 1) + " merging layers before the last layer");
  }
  if (rope_theta <= 0) throw ConfigError("tokenizer.rope_theta must be positive");
}

void LossWeights::validate() const {
  const double all[] = {mse, percp, gan, vf, enc, dec};
  for (double w : all) {
    if (!(w >= 0)) throw ConfigError("loss weights must be non-negative");
  }
  if (!(margin_enc >= -1 && margin_enc <= 2) || !(margin_dec >= -1 && margin_dec <= 2)) {
    throw ConfigError("alignment margins must lie in [-1, 2]");
  }
}

void GeneratorConfig::validate(const LevelSchedule& sched) const {
  require_positive(width, "generator.width");
  require_positive(depth, "generator.depth");
  require_positive(heads, "generator.heads");
  require_positive(mlp_ratio, "generator.mlp_ratio");
  require_positive(num_classes, "generator.num_classes");
  if (width % heads != 0) throw ConfigError("generator.width must be divisible by generator.heads");
  require_unit(class_dropout, "generator.class_dropout");
  if (ntp_tokens != 0) {
    bool found = false;
    for (int c : sched.cumulative) found = found || c == ntp_tokens;
    if (!found) {
      throw ConfigError("generator.ntp_tokens " + std::to_string(ntp_tokens) +
                        " must be 0 or a cumulative level length");
    }
  }
}

void CfgSchedule::validate() const {
  if (max_value < 1.0) throw ConfigError("cfg.max_value must be >= 1");
  require_unit(start_ratio, "cfg.start_ratio");
  require_unit(top_p, "cfg.top_p");
  if (top_k < 0) throw ConfigError("cfg.top_k must be non-negative");
  if (temperature < 0) throw ConfigError("cfg.temperature must be non-negative");
}

void RunConfig::validate() const {
  tokenizer.validate();
  loss.validate();
  require_unit(dropout.full_keep_prob, "dropout.full_keep_prob");
  generator.validate(tokenizer.schedule());
  cfg.validate();
  for (const TrainConfig* t : {&tokenizer_train, &generator_train}) {
    if (t->steps < 0) throw ConfigError("training steps must be non-negative");
    require_positive(t->batch_size, "batch_size");
    if (t->optim.lr < 0 || t->optim.min_lr < 0) throw ConfigError("learning rates must be non-negative");
  }
  if (data.train_images < 0 || data.eval_images < 0) throw ConfigError("image counts must be non-negative");
  require_positive(data.num_classes, "data.num_classes");
  if (data.num_classes != generator.num_classes) {
    throw ConfigError("data.num_classes and generator.num_classes differ");
  }
  if (samples_per_class < 0) throw ConfigError("samples_per_class must be non-negative");
}

RunConfig default_run_config() {
  RunConfig rc;
  rc.tokenizer_train.steps = 10000;
  rc.tokenizer_train.time_budget_s = 1800;
  rc.tokenizer_train.batch_size = 8;
  rc.tokenizer_train.optim.lr = 3e-4;
  rc.tokenizer_train.optim.min_lr = 3e-5;
  rc.tokenizer_train.optim.warmup_steps = 100;
  rc.tokenizer_train.optim.weight_decay = 1e-4;
  rc.generator_train.steps = 3000;
  rc.generator_train.batch_size = 16;
  rc.generator_train.optim.lr = 1e-3;
  rc.generator_train.optim.min_lr = 1e-5;
  rc.generator_train.optim.warmup_steps = 64;
  rc.generator_train.optim.weight_decay = 0.05;
  return rc;
}

TokenizerConfig paper_tokenizer_config() {
  TokenizerConfig c;
  c.image_size = 256;
  c.patch = 16;
  c.scales = 4;
  c.pool_factor = 2;
  c.levels = 8;
  c.depth = 24;
  c.decoder_depth = 24;
  c.width = 1024;
  c.heads = 16;
  c.codebook_size = 8192;
  c.code_dim = 8;
  c.min_tokens = 4;
  return c;
}

RESTOK_END_NAMESPACE
