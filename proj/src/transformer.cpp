#include "restok/transformer.hpp"

#include <cmath>

RESTOK_BEGIN_NAMESPACE

namespace {

constexpr Real kInitStd = Real(0.02);

Tensor append_rows(const Tensor& a, const Tensor& b) {
  if (a.empty()) return b;
  Tensor out({a.rows() + b.rows(), a.cols()});
  std::copy(a.data(), a.data() + a.size(), out.data());
  std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
  return out;
}

}  // namespace

LayerNormParams make_layer_norm(ParameterStore& store, const std::string& prefix, int width) {
  LayerNormParams ln;
  ln.gain = &store.add(prefix + ".gain", Tensor({width}, Real(1)));
  ln.bias = &store.add(prefix + ".bias", Tensor({width}));
  return ln;
}

LinearParams make_linear(ParameterStore& store, const std::string& prefix, int in, int out,
                         Real stddev, std::mt19937_64& rng, bool trainable) {
  LinearParams lin;
  lin.weight = &store.add(prefix + ".weight", normal_tensor({in, out}, stddev, rng), trainable);
  lin.bias = &store.add(prefix + ".bias", Tensor({out}), trainable);
  return lin;
}

BlockParams make_block(ParameterStore& store, const std::string& prefix, int width, int hidden,
                       int depth, std::mt19937_64& rng) {
  const Real proj_std = kInitStd / std::sqrt(Real(2 * std::max(1, depth)));
  BlockParams b;
  auto ln1 = make_layer_norm(store, prefix + ".ln1", width);
  b.ln1_gain = ln1.gain;
  b.ln1_bias = ln1.bias;
  auto q = make_linear(store, prefix + ".attn.q", width, width, kInitStd, rng);
  auto k = make_linear(store, prefix + ".attn.k", width, width, kInitStd, rng);
  auto v = make_linear(store, prefix + ".attn.v", width, width, kInitStd, rng);
  auto o = make_linear(store, prefix + ".attn.out", width, width, proj_std, rng);
  b.q_weight = q.weight;
  b.q_bias = q.bias;
  b.k_weight = k.weight;
  b.k_bias = k.bias;
  b.v_weight = v.weight;
  b.v_bias = v.bias;
  b.out_weight = o.weight;
  b.out_bias = o.bias;
  auto ln2 = make_layer_norm(store, prefix + ".ln2", width);
  b.ln2_gain = ln2.gain;
  b.ln2_bias = ln2.bias;
  auto fc1 = make_linear(store, prefix + ".mlp.fc1", width, hidden, kInitStd, rng);
  auto fc2 = make_linear(store, prefix + ".mlp.fc2", hidden, width, proj_std, rng);
  b.fc1_weight = fc1.weight;
  b.fc1_bias = fc1.bias;
  b.fc2_weight = fc2.weight;
  b.fc2_bias = fc2.bias;
  return b;
}

Var apply(Tape& tape, const LayerNormParams& ln, Var x) {
  return layer_norm(x, tape.parameter(*ln.gain), tape.parameter(*ln.bias));
}

Var apply(Tape& tape, const LinearParams& lin, Var x) {
  return linear(x, tape.parameter(*lin.weight), tape.parameter(*lin.bias));
}

Var attention_sublayer(Tape& tape, const BlockParams& p, Var x, const AttentionContext& ctx) {
  Var h = layer_norm(x, tape.parameter(*p.ln1_gain), tape.parameter(*p.ln1_bias));
  Var q = linear(h, tape.parameter(*p.q_weight), tape.parameter(*p.q_bias));
  Var k = linear(h, tape.parameter(*p.k_weight), tape.parameter(*p.k_bias));
  Var v = linear(h, tape.parameter(*p.v_weight), tape.parameter(*p.v_bias));
  Var a = attention(q, k, v, ctx.mask, ctx.rotary, ctx.rotary, ctx.heads);
  return add(x, linear(a, tape.parameter(*p.out_weight), tape.parameter(*p.out_bias)));
}

Var mlp_sublayer(Tape& tape, const BlockParams& p, Var x) {
  Var h = layer_norm(x, tape.parameter(*p.ln2_gain), tape.parameter(*p.ln2_bias));
  h = gelu(linear(h, tape.parameter(*p.fc1_weight), tape.parameter(*p.fc1_bias)));
  return add(x, linear(h, tape.parameter(*p.fc2_weight), tape.parameter(*p.fc2_bias)));
}

Var cached_attention_sublayer(Tape& tape, const BlockParams& p, Var x_new, KvCache& cache,
                              std::shared_ptr<const BoolMatrix> mask, int heads) {
  Var h = layer_norm(x_new, tape.parameter(*p.ln1_gain), tape.parameter(*p.ln1_bias));
  Var q = linear(h, tape.parameter(*p.q_weight), tape.parameter(*p.q_bias));
  Var k = linear(h, tape.parameter(*p.k_weight), tape.parameter(*p.k_bias));
  Var v = linear(h, tape.parameter(*p.v_weight), tape.parameter(*p.v_bias));
  cache.keys = append_rows(cache.keys, k.value());
  cache.values = append_rows(cache.values, v.value());
  Var keys = tape.constant(cache.keys);
  Var values = tape.constant(cache.values);
  Var a = masked_attention(q, keys, values, std::move(mask), heads);
  return add(x_new, linear(a, tape.parameter(*p.out_weight), tape.parameter(*p.out_bias)));
}

RESTOK_END_NAMESPACE
