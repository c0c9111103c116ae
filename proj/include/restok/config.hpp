#pragma once

#include <cstdint>
#include <string>

#include "restok/geometry.hpp"
#include "restok/optim.hpp"

RESTOK_BEGIN_NAMESPACE

struct TokenizerConfig {
  int image_size = 32;
  int channels = 3;
  int patch = 4;            // stem downsampling factor f
  int scales = 4;           // S image-token scales
  int pool_factor = 2;      // per-stage merge factor
  int levels = 6;           // L latent hierarchies
  int depth = 4;            // N encoder layers
  int decoder_depth = 4;
  int width = 64;           // d
  int heads = 4;
  int mlp_ratio = 4;
  int codebook_size = 512;  // K
  int code_dim = 8;
  double commitment = 0.25;
  bool l2_codes = false;     // nearest code by cosine: latents and entries are unit-normalized
  bool codebook_data_init = true;  // re-seed the codebook from data before training
  int vf_dim = 32;          // mock vision-feature width
  int vf_hidden = 64;
  int min_tokens = 4;       // shortest kept prefix
  bool residual_latents = true;
  bool residual_images = true;
  double rope_theta = 10000.0;

  int grid() const { return image_size / patch; }
  int patch_dim() const { return patch * patch * channels; }
  LevelSchedule schedule() const { return level_schedule(levels); }
  ScalePyramid pyramid() const { return scale_pyramid({grid(), grid()}, scales, pool_factor); }

  // Throws ConfigError (or GeometryError) when the geometry is inconsistent.
  void validate() const;
};

// Loss weights plus the alignment margins.
struct LossWeights {
  double mse = 1.0;
  double percp = 1.0;
  double gan = 0.5;
  double vf = 1.0;
  double enc = 1.0;
  double dec = 1.0;
  double margin_enc = 0.85;
  double margin_dec = 0.85;

  void validate() const;
};

struct DropoutConfig {
  bool enabled = true;
  double full_keep_prob = 0.8;
};

struct GeneratorConfig {
  int width = 128;
  int depth = 4;
  int heads = 4;
  int mlp_ratio = 4;
  int num_classes = 16;
  int ntp_tokens = 4;          // 0 disables the NTP group; schedule total = vanilla AR
  double class_dropout = 0.1;  // null-class rate for guidance training

  void validate(const LevelSchedule& schedule) const;
};

enum class CfgKind { Off, Step, Linear };

struct CfgSchedule {
  CfgKind kind = CfgKind::Off;
  double start_ratio = 0.0;
  double max_value = 1.0;
  int top_k = 0;        // 0 bypasses
  double top_p = 0.0;   // 0 bypasses
  double temperature = 1.0;

  void validate() const;
};

struct TrainConfig {
  int steps = 1000;
  int batch_size = 8;
  AdamWConfig optim;
  int log_every = 25;
  double time_budget_s = 0;  // stop early once exceeded; 0 = unlimited
};

struct DataConfig {
  int train_images = 1024;
  int eval_images = 128;
  int num_classes = 16;
};

struct RunConfig {
  TokenizerConfig tokenizer;
  LossWeights loss;
  DropoutConfig dropout;
  GeneratorConfig generator;
  CfgSchedule cfg;
  TrainConfig tokenizer_train;
  TrainConfig generator_train;
  DataConfig data;
  std::uint64_t seed = 0;
  int samples_per_class = 4;
  std::string out_dir = "runs/default";

  void validate() const;
};

// Defaults tuned for single-core desk runs.
RunConfig default_run_config();
// Geometry of the published model: 256px, f=16, 128 latents, 8192 codes.
TokenizerConfig paper_tokenizer_config();

RESTOK_END_NAMESPACE
