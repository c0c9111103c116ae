#pragma once

#include <random>
#include <vector>

#include "restok/config.hpp"
#include "restok/tensor.hpp"

namespace testutil {

using restok::Real;
using restok::Tensor;

inline Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Real>(u(rng));
  return t;
}

// 8x8 image, 2x2 patches (4x4 grid), two scales, three latent levels (4 latents).
inline restok::TokenizerConfig tiny_tokenizer_config() {
  restok::TokenizerConfig c;
  c.image_size = 8;
  c.patch = 2;
  c.scales = 2;
  c.pool_factor = 2;
  c.levels = 3;
  c.depth = 2;
  c.decoder_depth = 1;
  c.width = 12;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.codebook_size = 8;
  c.code_dim = 3;
  c.vf_dim = 4;
  c.vf_hidden = 6;
  c.min_tokens = 1;
  return c;
}

// Slightly larger: 16x16 image, 4x4 grid, three scales, four levels (8 latents).
inline restok::TokenizerConfig small_tokenizer_config() {
  restok::TokenizerConfig c;
  c.image_size = 16;
  c.patch = 4;
  c.scales = 3;
  c.pool_factor = 2;
  c.levels = 4;
  c.depth = 5;
  c.decoder_depth = 2;
  c.width = 24;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.codebook_size = 16;
  c.code_dim = 4;
  c.vf_dim = 8;
  c.vf_hidden = 8;
  c.min_tokens = 1;
  return c;
}

// Dense reference: softmax(Q K^T / sqrt(dh) + mask) V per head, in double.
inline std::vector<double> dense_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                           const std::vector<std::vector<bool>>& allow, int heads) {
  const int tq = q.rows(), tk = k.rows(), d = q.cols(), dh = d / heads;
  std::vector<double> out(static_cast<std::size_t>(tq) * d, 0.0);
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < tq; ++i) {
      std::vector<double> s(static_cast<std::size_t>(tk));
      double mx = -1e300;
      for (int j = 0; j < tk; ++j) {
        double dot = 0;
        for (int c = 0; c < dh; ++c) dot += double(q.at(i, h * dh + c)) * double(k.at(j, h * dh + c));
        s[j] = allow[i][j] ? dot / std::sqrt(double(dh)) : -1e300;
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (int j = 0; j < tk; ++j) {
        s[j] = allow[i][j] ? std::exp(s[j] - mx) : 0.0;
        z += s[j];
      }
      for (int j = 0; j < tk; ++j) {
        for (int c = 0; c < dh; ++c) out[std::size_t(i) * d + h * dh + c] += s[j] / z * double(v.at(j, h * dh + c));
      }
    }
  }
  return out;
}

}  // namespace testutil
