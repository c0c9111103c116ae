#pragma once

#include <memory>
#include <span>
#include <vector>

#include "restok/mask.hpp"
#include "restok/tape.hpp"

RESTOK_BEGIN_NAMESPACE

// Differentiable primitives. Every function records onto the tape of its
// first input. Shapes: tokens are [n x d]; grids are [h x w x c].

// ---- linear algebra and elementwise ----
Var matmul(Var a, Var b);                  // [m x k] . [k x n]
Var linear(Var x, Var weight, Var bias);   // x . W + b, W is [in x out]
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var x, Var row);               // broadcast a [d] (or [1 x d]) row over [n x d]
Var scale(Var x, Real s);
Var add_scalar(Var x, Real s);
Var gelu(Var x);
Var relu(Var x);
Var tanh_act(Var x);
Var layer_norm(Var x, Var gain, Var bias, Real eps = Real(1e-5));

// ---- shape plumbing ----
Var reshape(Var x, std::vector<int> shape);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var x, int begin, int count);
Var gather_rows(Var table, std::span<const int> ids);
Var stop_gradient(Var x);
// Forward value of `target`, gradient passed unchanged to `input`.
Var straight_through(Var input, Var target);
// out[i] = x[source[i]] reshaped to `shape`; backward scatters.
Var permute(Var x, std::span<const int> source, std::vector<int> shape);

// ---- reductions and losses ----
Var sum(Var x);
Var mean(Var x);
Var mean_rows(Var x);                      // [n x d] -> [1 x d]
Var mse(Var a, Var b);                     // mean squared difference
Var l2_normalize_rows(Var x);             // zero rows stay zero
Var cosine_rows(Var a, Var b);             // [n x d],[n x d] -> [n]; zero-norm rows give 0
// Mean token cross-entropy; targets of -1 are ignored.
Var cross_entropy(Var logits, std::span<const int> targets);

// ---- grids ----
Var avg_pool2d(Var x, int factor);
// output[i, j] = x[floor(i*H/H'), floor(j*W/W')]
Var nearest_resize(Var x, int out_h, int out_w);

// ---- attention ----

// Per-token rotation angles for multi-axis rotary embeddings. Each head's
// dim/2 rotation pairs are split into t, y and x sections (equal thirds,
// remainder to t); pair p rotates by pos[section(p)] * theta^(-2p/head_dim).
struct RotaryTable {
  int head_dim = 0;
  std::vector<Real> cos;  // [tokens x head_dim/2]
  std::vector<Real> sin;
  int tokens() const { return head_dim ? static_cast<int>(cos.size()) / (head_dim / 2) : 0; }
};

struct RotarySections {
  int t = 0;
  int y = 0;
  int x = 0;
};
RotarySections rotary_sections(int head_dim);
RotaryTable make_rotary_table(const PositionTriples& positions, int head_dim, Real theta = Real(10000));

Var rope(Var x, std::shared_ptr<const RotaryTable> table, int heads);

// softmax(Q K^T / sqrt(d_head) restricted to allowed keys) V, per head.
// Masked keys are skipped outright, so their values never enter a row's sum.
Var masked_attention(Var q, Var k, Var v, std::shared_ptr<const BoolMatrix> mask, int heads);

// Rotary-encoded attention: rotates q and k by their position triples, then
// applies masked_attention. q_pos/k_pos may be null for unrotated attention.
Var attention(Var q, Var k, Var v, std::shared_ptr<const BoolMatrix> mask,
              std::shared_ptr<const RotaryTable> q_pos, std::shared_ptr<const RotaryTable> k_pos,
              int heads);

// Plain (tape-free) dense GEMM helper: C = op(A) op(B) (+ C when accumulate).
void gemm(const Real* a, const Real* b, Real* c, int m, int k, int n, bool trans_a, bool trans_b,
          bool accumulate);

RESTOK_END_NAMESPACE
