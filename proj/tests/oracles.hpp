#pragma once

// Independent double-precision transcriptions of the residual latent
// initialization loop and the residual merging block, used as oracles.

#include <cmath>
#include <vector>

#include "restok/tokenizer.hpp"

namespace oracle {

using restok::Real;
using restok::Tensor;

// p0 is [H x W x C]; returns the levels flattened coarse to fine, [total x C].
inline std::vector<double> residual_init(const Tensor& p0_in, int L) {
  const int H = p0_in.dim(0), W = p0_in.dim(1), C = p0_in.dim(2);
  std::vector<double> p(p0_in.values().begin(), p0_in.values().end());
  auto at = [&](std::vector<double>& g, int i, int j, int c) -> double& { return g[(std::size_t(i) * W + j) * C + c]; };
  auto pool = [&](int h, int w) {
    std::vector<double> z(std::size_t(h) * w * C);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int c = 0; c < C; ++c) z[(std::size_t(i) * w + j) * C + c] = at(p, i * H / h, j * W / w, c);
    return z;
  };
  int h = 1, w = 1;
  std::vector<double> out;
  std::vector<double> z = pool(h, w);
  int zh = h, zw = w;
  out.insert(out.end(), z.begin(), z.end());
  for (int l = 2; l <= L; ++l) {
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        for (int c = 0; c < C; ++c) at(p, i, j, c) -= z[(std::size_t(i * zh / H) * zw + j * zw / W) * C + c];
    z = pool(h, w);
    zh = h;
    zw = w;
    out.insert(out.end(), z.begin(), z.end());
    if (l % 2 == 0) {
      w *= 2;
    } else {
      h *= 2;
    }
  }
  return out;
}

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t) {
  Mat m(static_cast<std::size_t>(t.rows()), std::vector<double>(static_cast<std::size_t>(t.cols())));
  for (int r = 0; r < t.rows(); ++r)
    for (int c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

inline Mat layer_norm(const Mat& x, const Tensor& g, const Tensor& b) {
  Mat y = x;
  for (std::size_t r = 0; r < x.size(); ++r) {
    const double n = static_cast<double>(x[r].size());
    double mu = 0, var = 0;
    for (double v : x[r]) mu += v;
    mu /= n;
    for (double v : x[r]) var += (v - mu) * (v - mu);
    var /= n;
    for (std::size_t c = 0; c < x[r].size(); ++c) y[r][c] = (x[r][c] - mu) / std::sqrt(var + 1e-5) * g[c] + b[c];
  }
  return y;
}

inline Mat linear(const Mat& x, const Tensor& w, const Tensor& b) {
  const int out = w.cols();
  Mat y(x.size(), std::vector<double>(static_cast<std::size_t>(out)));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (int o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < x[r].size(); ++i) s += x[r][i] * w.at(static_cast<int>(i), o);
      y[r][o] = s;
    }
  return y;
}

struct Block {
  const restok::ParameterStore& store;
  std::string prefix;
  const Tensor& p(const std::string& name) const { return store.get(prefix + "." + name).value; }
};

inline void rotate(Mat& x, const std::vector<std::array<int, 3>>& pos, int heads, double theta) {
  const int d = static_cast<int>(x[0].size()), dh = d / heads, pairs = dh / 2;
  const int base = pairs / 3, t_pairs = pairs - 2 * base;
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (int h = 0; h < heads; ++h) {
      for (int q = 0; q < pairs; ++q) {
        const int axis = q < t_pairs ? 0 : (q < t_pairs + base ? 1 : 2);
        const double ang = pos[r][axis] * std::pow(theta, -2.0 * q / dh);
        double& a = x[r][h * dh + 2 * q];
        double& b = x[r][h * dh + 2 * q + 1];
        const double na = a * std::cos(ang) - b * std::sin(ang);
        const double nb = a * std::sin(ang) + b * std::cos(ang);
        a = na;
        b = nb;
      }
    }
  }
}

inline Mat attention_sublayer(const Mat& x, const Block& blk, const std::vector<std::vector<bool>>& allow,
                              const std::vector<std::array<int, 3>>& pos, int heads, double theta) {
  const Mat h = layer_norm(x, blk.p("ln1.gain"), blk.p("ln1.bias"));
  Mat q = linear(h, blk.p("attn.q.weight"), blk.p("attn.q.bias"));
  Mat k = linear(h, blk.p("attn.k.weight"), blk.p("attn.k.bias"));
  const Mat v = linear(h, blk.p("attn.v.weight"), blk.p("attn.v.bias"));
  rotate(q, pos, heads, theta);
  rotate(k, pos, heads, theta);
  const std::size_t n = x.size();
  const int d = static_cast<int>(x[0].size()), dh = d / heads;
  Mat a(n, std::vector<double>(static_cast<std::size_t>(d), 0.0));
  for (int hd = 0; hd < heads; ++hd) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n, 0.0);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        if (!allow[i][j]) continue;
        double dot = 0;
        for (int c = 0; c < dh; ++c) dot += q[i][hd * dh + c] * k[j][hd * dh + c];
        s[j] = dot / std::sqrt(double(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (std::size_t j = 0; j < n; ++j) {
        s[j] = allow[i][j] ? std::exp(s[j] - mx) : 0.0;
        z += s[j];
      }
      for (std::size_t j = 0; j < n; ++j)
        for (int c = 0; c < dh; ++c) a[i][hd * dh + c] += s[j] / z * v[j][hd * dh + c];
    }
  }
  const Mat o = linear(a, blk.p("attn.out.weight"), blk.p("attn.out.bias"));
  Mat y = x;
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) y[i][c] += o[i][c];
  return y;
}

inline Mat mlp_sublayer(const Mat& x, const Block& blk) {
  const Mat h = layer_norm(x, blk.p("ln2.gain"), blk.p("ln2.bias"));
  Mat f = linear(h, blk.p("mlp.fc1.weight"), blk.p("mlp.fc1.bias"));
  for (auto& row : f)
    for (double& v : row) v = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
  const Mat o = linear(f, blk.p("mlp.fc2.weight"), blk.p("mlp.fc2.bias"));
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t c = 0; c < x[i].size(); ++c) y[i][c] += o[i][c];
  return y;
}

// One residual merging block on image scales [first_scale, S) (coarsest
// first) plus all latents. Returns the token rows after the block with the
// new coarser scale prepended.
inline Mat merge_block(const restok::TokenizerModel& model, int layer, const std::vector<Tensor>& scales,
                       int first_scale, const Tensor& latents) {
  const auto& cfg = model.config();
  const auto& pyr = model.pyramid();
  const auto& sched = model.schedule();
  const int S = pyr.count();
  const int f = pyr.factor;

  // rotary ids over the whole pyramid, then latents
  std::vector<std::vector<std::array<int, 3>>> scale_pos(S);
  int next = 0;
  for (int s = 0; s < S; ++s) {
    const int t = next;
    for (int y = 0; y < pyr.scales[s].h; ++y)
      for (int x = 0; x < pyr.scales[s].w; ++x) scale_pos[s].push_back({t, y, x});
    next = std::max({t, pyr.scales[s].h - 1, pyr.scales[s].w - 1}) + 1;
  }

  Mat x;
  std::vector<std::array<int, 3>> pos;
  std::vector<int> group;  // image scale index, or S + level for latents
  for (std::size_t i = 0; i < scales.size(); ++i) {
    const int s = first_scale + static_cast<int>(i);
    for (const auto& row : to_mat(scales[i])) x.push_back(row);
    for (const auto& p : scale_pos[s]) pos.push_back(p);
    group.insert(group.end(), pyr.scales[s].size(), s);
  }
  for (const auto& row : to_mat(latents)) x.push_back(row);
  for (int i = 0; i < sched.total(); ++i) {
    pos.push_back({next + i, next + i, next + i});
    group.push_back(S + sched.level_of(i));
  }
  const std::size_t n = x.size();
  std::vector<std::vector<bool>> allow(n, std::vector<bool>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const bool row_image = group[i] < S, col_image = group[j] < S;
      allow[i][j] = row_image ? (col_image && group[j] <= group[i]) : (col_image || group[j] <= group[i]);
    }

  const Block blk{model.params(), "encoder." + std::to_string(layer)};
  // 1: attention over every present token
  x = attention_sublayer(x, blk, allow, pos, cfg.heads, cfg.rope_theta);
  // 2: merge the coarsest present scale into the next coarser one
  const auto fine = pyr.scales[first_scale];
  const auto coarse = pyr.scales[first_scale - 1];
  const int d = cfg.width;
  Mat merged(static_cast<std::size_t>(coarse.size()), std::vector<double>(static_cast<std::size_t>(d), 0.0));
  for (int i = 0; i < fine.h; ++i)
    for (int j = 0; j < fine.w; ++j)
      for (int c = 0; c < d; ++c) merged[(i / f) * coarse.w + j / f][c] += x[i * fine.w + j][c] / (f * f);
  // 3: replace the finer tokens by their residual
  for (int i = 0; i < fine.h; ++i)
    for (int j = 0; j < fine.w; ++j)
      for (int c = 0; c < d; ++c) x[i * fine.w + j][c] -= merged[(i * coarse.h / fine.h) * coarse.w + j * coarse.w / fine.w][c];
  // 4: MLP over all tokens; 5: coarser scale first
  Mat all = merged;
  all.insert(all.end(), x.begin(), x.end());
  return mlp_sublayer(all, blk);
}

}  // namespace oracle
