#pragma once

#include <memory>
#include <random>
#include <string>

#include "restok/ops.hpp"
#include "restok/params.hpp"

RESTOK_BEGIN_NAMESPACE

// Pre-norm transformer block parameters.
struct BlockParams {
  Parameter* ln1_gain = nullptr;
  Parameter* ln1_bias = nullptr;
  Parameter* q_weight = nullptr;
  Parameter* q_bias = nullptr;
  Parameter* k_weight = nullptr;
  Parameter* k_bias = nullptr;
  Parameter* v_weight = nullptr;
  Parameter* v_bias = nullptr;
  Parameter* out_weight = nullptr;
  Parameter* out_bias = nullptr;
  Parameter* ln2_gain = nullptr;
  Parameter* ln2_bias = nullptr;
  Parameter* fc1_weight = nullptr;
  Parameter* fc1_bias = nullptr;
  Parameter* fc2_weight = nullptr;
  Parameter* fc2_bias = nullptr;
};

struct LayerNormParams {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;
};

struct LinearParams {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
};

BlockParams make_block(ParameterStore& store, const std::string& prefix, int width, int hidden,
                       int depth, std::mt19937_64& rng);
LayerNormParams make_layer_norm(ParameterStore& store, const std::string& prefix, int width);
LinearParams make_linear(ParameterStore& store, const std::string& prefix, int in, int out,
                         Real stddev, std::mt19937_64& rng, bool trainable = true);

Var apply(Tape& tape, const LayerNormParams& ln, Var x);
Var apply(Tape& tape, const LinearParams& lin, Var x);

struct AttentionContext {
  std::shared_ptr<const BoolMatrix> mask;
  std::shared_ptr<const RotaryTable> rotary;  // null: no rotary encoding
  int heads = 1;
};

// x + Attention(LN(x)).
Var attention_sublayer(Tape& tape, const BlockParams& p, Var x, const AttentionContext& ctx);
// x + MLP(LN(x)) with a GELU hidden layer.
Var mlp_sublayer(Tape& tape, const BlockParams& p, Var x);

// Key/value rows of earlier tokens for incremental decoding.
struct KvCache {
  Tensor keys;
  Tensor values;
  int length() const { return keys.empty() ? 0 : keys.rows(); }
};

// Attention sublayer for `x_new` whose queries see the cached rows followed by
// the new rows; `mask` is [new x (cached + new)]. Appends the new keys/values.
Var cached_attention_sublayer(Tape& tape, const BlockParams& p, Var x_new, KvCache& cache,
                              std::shared_ptr<const BoolMatrix> mask, int heads);

RESTOK_END_NAMESPACE
