#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "restok/config.hpp"
#include "restok/layout.hpp"
#include "restok/transformer.hpp"

RESTOK_BEGIN_NAMESPACE

// Frozen random network standing in for a pretrained vision model. Emits a
// global token and one token per stem patch.
class MockVF {
 public:
  struct Features {
    Tensor global;   // [1 x vf_dim]
    Tensor patches;  // [grid*grid x vf_dim]
  };

  MockVF(const TokenizerConfig& cfg, std::uint64_t seed);

  Features features(const Tensor& image) const;
  const ParameterStore& params() const { return store_; }
  int dim() const { return dim_; }

 private:
  ParameterStore store_;
  int patch_ = 0;
  int dim_ = 0;
  Parameter* hidden_w_ = nullptr;
  Parameter* hidden_b_ = nullptr;
  Parameter* patch_w_ = nullptr;
  Parameter* patch_b_ = nullptr;
  Parameter* global_w_ = nullptr;
  Parameter* global_b_ = nullptr;
};

// Image [H x W x C] <-> patch rows [(H/f)*(W/f) x f*f*C], row-major over the grid.
Tensor patchify(const Tensor& image, int patch);
Tensor unpatchify(const Tensor& patches, int image_size, int channels, int patch);

// Image tokens of the present scales (coarsest first) plus every latent token.
struct EncoderState {
  std::vector<Var> scales;  // each [h*w x d]
  int first_scale = 0;      // pyramid index of scales.front()
  Var latents;              // [latent_total x d]
};

struct QuantizeResult {
  Var projected;    // latents in code space, [n x code_dim]
  Var quantized;    // straight-through codebook vectors in code space
  Var zhat;         // quantized latents projected back to model width
  std::vector<int> codes;
  Var vq_loss;      // codebook + commitment * beta
};

enum class DecoderBranch { Image, VisionFeature };

struct AlignmentLosses {
  Var enc;
  Var dec;
  Var vf;
};

// Pluggable loss terms kept for the shape of the total objective; both
// default to zero.
struct LossHooks {
  std::function<Var(Tape&, Var recon, Var target)> perceptual;
  std::function<Var(Tape&, Var recon)> adversarial;
};

struct TokenizerLosses {
  Var total;
  Var mse;
  Var vq;
  Var enc;
  Var dec;
  Var vf;
  Var recon;  // image-branch reconstruction [H x W x C]
  QuantizeResult quant;
};

// Hierarchical residual 1D tokenizer: linear patch stem, ViT encoder whose
// merging layers grow a coarse-to-fine image pyramid, vector quantizer, ViT
// decoder with image and vision-feature mask-token branches.
class TokenizerModel {
 public:
  TokenizerModel(const TokenizerConfig& cfg, std::uint64_t seed);
  TokenizerModel(TokenizerModel&&) = default;

  const TokenizerConfig& config() const { return cfg_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  const LevelSchedule& schedule() const { return schedule_; }
  const ScalePyramid& pyramid() const { return pyramid_; }
  const std::vector<int>& keep_lengths() const { return keep_lengths_; }

  // Encoder layers (0-based) that end with a residual merge.
  const std::vector<int>& merge_layers() const { return merge_layers_; }
  bool is_merge_layer(int layer) const;

  Var stem(Tape& tape, const Tensor& image) const;  // [grid x grid x d]
  EncoderState encoder_input(Tape& tape, Var p0) const;
  // One encoder layer; merge layers append a coarser scale between the
  // attention and MLP sublayers.
  EncoderState encoder_layer(Tape& tape, const EncoderState& state, int layer) const;
  // The merging form of encoder_layer; `layer` must be a merge layer and a
  // coarser scale must still be missing (StateError otherwise).
  EncoderState residual_merge_block(Tape& tape, const EncoderState& state, int layer) const;
  // All layers plus the final norm.
  EncoderState encode(Tape& tape, const Tensor& image) const;
  EncoderState encode_from(Tape& tape, EncoderState state, int first_layer) const;

  QuantizeResult quantize(Tape& tape, Var latents) const;
  Var embed_codes(Tape& tape, std::span<const int> codes) const;

  // Image branch returns pixels [H x W x C]; vision-feature branch returns
  // decoder tokens at every grid position [grid*grid x d].
  Var decode(Tape& tape, Var zhat, int keep_len, DecoderBranch branch) const;

  AlignmentLosses alignment_losses(Tape& tape, Var coarsest, Var vf_tokens,
                                   const MockVF::Features& target, const LossWeights& w) const;

  // Full objective for one image. keep_vf < 0 skips the vision-feature branch.
  TokenizerLosses forward_losses(Tape& tape, const Tensor& image, const MockVF::Features& vf,
                                 int keep_img, int keep_vf, const LossWeights& w,
                                 const LossHooks& hooks = {}) const;

  // Overwrites the codebook with projected latents of `images` (sampled
  // without replacement, cycled with jitter when there are fewer than K).
  void init_codebook_from_data(const std::vector<Tensor>& images, std::uint64_t seed);

  // Tape-free helpers.
  std::vector<int> tokenize(const Tensor& image) const;
  Tensor reconstruct(const Tensor& image, int keep_len) const;
  Tensor decode_codes(std::span<const int> codes) const;

 private:
  struct CachedLayout {
    std::shared_ptr<const BoolMatrix> mask;
    std::shared_ptr<const RotaryTable> rotary;
    std::vector<int> scale_sizes;
  };
  const CachedLayout& decoder_cache(int keep_len) const;
  void check_keep_len(int keep_len) const;

  TokenizerConfig cfg_;
  LevelSchedule schedule_;
  ScalePyramid pyramid_;
  std::vector<int> keep_lengths_;
  std::vector<int> merge_layers_;
  ParameterStore store_;

  LinearParams stem_;
  std::vector<BlockParams> encoder_;
  LayerNormParams encoder_norm_;
  LinearParams quant_down_;
  Parameter* codebook_ = nullptr;
  LinearParams quant_up_;
  std::vector<BlockParams> decoder_;
  LayerNormParams decoder_norm_;
  Parameter* mask_img_ = nullptr;
  Parameter* mask_vf_ = nullptr;
  Parameter* mask_pos_ = nullptr;
  LinearParams unstem_;
  LinearParams align_enc_;
  LinearParams align_dec_;

  std::vector<CachedLayout> encoder_layouts_;  // index = present scales - 1
  std::map<int, CachedLayout> decoder_layouts_;  // by keep length
  std::vector<int> unpatch_index_;
};

// Absolute squared-distance nearest codebook row (ties to the lowest index).
int nearest_code(const Tensor& codebook, std::span<const Real> vector);

Var total_loss(Tape& tape, Var recon, Var target, Var vq_loss, Var vf_loss, const LossWeights& w,
               const LossHooks& hooks = {});

RESTOK_END_NAMESPACE
