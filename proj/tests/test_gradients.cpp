// Built in double precision: autodiff against central differences.
#include <gtest/gtest.h>

#include <functional>

#include "restok/generator.hpp"
#include "restok/gradcheck.hpp"
#include "restok/ops.hpp"
#include "restok/pipeline.hpp"
#include "restok/tokenizer.hpp"
#include "test_util.hpp"

using namespace restok;
using testutil::random_tensor;

namespace {

constexpr Real kEps = 1e-4;
constexpr double kTol = 1e-3;

using Builder = std::function<Var(const std::vector<Var>&)>;

// Projects the output onto fixed random weights so every coordinate matters.
Var weighted_sum(Var out, std::uint64_t seed) {
  return sum(mul(out, out.tape()->constant(random_tensor(out.shape(), seed))));
}

double max_rel_error(std::vector<Tensor> inputs, const Builder& f) {
  std::vector<Parameter> params;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    params.push_back({"x" + std::to_string(i), inputs[i], Tensor::zeros_like(inputs[i]), true});
  }
  {
    Tape tape;
    std::vector<Var> vars;
    for (auto& p : params) vars.push_back(tape.parameter(p));
    tape.backward(weighted_sum(f(vars), 99));
  }
  double worst = 0;
  for (auto& p : params) {
    const auto numeric = parameter_finite_difference(p, [&] {
      Tape tape(false);
      std::vector<Var> vars;
      for (auto& q : params) vars.push_back(tape.constant(q.value));
      return weighted_sum(f(vars), 99).value().item();
    }, kEps);
    worst = std::max(worst, compare_gradients(p.grad.values(), numeric).max_relative_error);
  }
  return worst;
}

std::shared_ptr<BoolMatrix> lower_triangle(int n) {
  auto m = std::make_shared<BoolMatrix>(n, n, false);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c <= r; ++c) m->set(r, c, true);
  return m;
}

// Every coordinate of every trainable parameter, or a strided subset. Detached
// values are replayed from the analytic pass.
double store_rel_error(ParameterStore& store, const std::function<Var(Tape&)>& loss, std::size_t stride = 1) {
  store.zero_grad();
  DetachJournal journal;
  {
    Tape tape;
    tape.set_detach_journal(&journal);
    tape.backward(loss(tape));
  }
  journal.replay = true;
  double worst = 0;
  for (Parameter* p : store.all()) {
    if (!p->trainable) continue;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < p->value.size(); i += stride) idx.push_back(i);
    const auto numeric = parameter_finite_difference(*p, [&] {
      Tape tape(false);
      journal.cursor = 0;
      tape.set_detach_journal(&journal);
      return loss(tape).value().item();
    }, kEps, idx);
    std::vector<Real> analytic;
    for (std::size_t i : idx) analytic.push_back(p->grad[i]);
    const auto cmp = compare_gradients(analytic, numeric);
    const double e = cmp.max_relative_error;
    EXPECT_LE(e, kTol) << p->name << " analytic " << analytic[cmp.worst_index] << " numeric "
                       << numeric[cmp.worst_index];
    worst = std::max(worst, e);
  }
  return worst;
}

// Moves every trainable parameter off its initialization. Residual-initialized
// latents start as near-zero vectors, where layer norm curves on a scale close
// to the difference step.
void perturb_parameters(ParameterStore& store, std::uint64_t seed, double std) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, std);
  for (Parameter* p : store.all()) {
    if (!p->trainable) continue;
    for (auto& v : p->value.values()) v += static_cast<Real>(n(rng));
  }
}

}  // namespace

static_assert(sizeof(Real) == sizeof(double));

TEST(Gradients, Elementwise) {
  const Tensor a = random_tensor({3, 4}, 1), b = random_tensor({3, 4}, 2);
  EXPECT_LE(max_rel_error({a, b}, [](auto& v) { return add(v[0], v[1]); }), kTol);
  EXPECT_LE(max_rel_error({a, b}, [](auto& v) { return sub(v[0], v[1]); }), kTol);
  EXPECT_LE(max_rel_error({a, b}, [](auto& v) { return mul(v[0], v[1]); }), kTol);
  EXPECT_LE(max_rel_error({a}, [](auto& v) { return scale(v[0], Real(-1.7)); }), kTol);
  EXPECT_LE(max_rel_error({a}, [](auto& v) { return add_scalar(v[0], Real(0.3)); }), kTol);
  EXPECT_LE(max_rel_error({a, random_tensor({4}, 3)}, [](auto& v) { return add_row(v[0], v[1]); }), kTol);
}

TEST(Gradients, Activations) {
  Tensor a = random_tensor({4, 5}, 4, -2, 2);
  for (auto& v : a.values()) if (std::abs(v) < 0.05) v += 0.2;  // keep relu away from its kink
  EXPECT_LE(max_rel_error({a}, [](auto& v) { return gelu(v[0]); }), kTol);
  EXPECT_LE(max_rel_error({a}, [](auto& v) { return relu(v[0]); }), kTol);
  EXPECT_LE(max_rel_error({a}, [](auto& v) { return tanh_act(v[0]); }), kTol);
}

TEST(Gradients, LinearAlgebra) {
  const Tensor x = random_tensor({3, 4}, 5), w = random_tensor({4, 2}, 6), b = random_tensor({2}, 7);
  EXPECT_LE(max_rel_error({x, w}, [](auto& v) { return matmul(v[0], v[1]); }), kTol);
  EXPECT_LE(max_rel_error({x, w, b}, [](auto& v) { return linear(v[0], v[1], v[2]); }), kTol);
  EXPECT_LE(max_rel_error({x, random_tensor({4}, 8, 0.5, 1.5), random_tensor({4}, 9)},
                          [](auto& v) { return layer_norm(v[0], v[1], v[2]); }),
            kTol);
}

TEST(Gradients, ShapeOps) {
  const Tensor x = random_tensor({4, 3}, 10), y = random_tensor({2, 3}, 11);
  EXPECT_LE(max_rel_error({x}, [](auto& v) { return reshape(v[0], {3, 4}); }), kTol);
  EXPECT_LE(max_rel_error({x, y}, [](auto& v) { return concat_rows({v[0], v[1]}); }), kTol);
  EXPECT_LE(max_rel_error({x}, [](auto& v) { return slice_rows(v[0], 1, 2); }), kTol);
  const std::vector<int> ids = {2, 0, 2, 3};
  EXPECT_LE(max_rel_error({x}, [&](auto& v) { return gather_rows(v[0], ids); }), kTol);
  const std::vector<int> order = {11, 0, 5, 3, 7, 1, 2, 4, 6, 8, 9, 10};
  EXPECT_LE(max_rel_error({x}, [&](auto& v) { return permute(v[0], order, {2, 6}); }), kTol);
}

TEST(Gradients, Reductions) {
  const Tensor a = random_tensor({3, 4}, 12), b = random_tensor({3, 4}, 13);
  EXPECT_LE(max_rel_error({a}, [](auto& v) { return sum(v[0]); }), kTol);
  EXPECT_LE(max_rel_error({a}, [](auto& v) { return mean(v[0]); }), kTol);
  EXPECT_LE(max_rel_error({a}, [](auto& v) { return mean_rows(v[0]); }), kTol);
  EXPECT_LE(max_rel_error({a, b}, [](auto& v) { return mse(v[0], v[1]); }), kTol);
  EXPECT_LE(max_rel_error({a, b}, [](auto& v) { return cosine_rows(v[0], v[1]); }), kTol);
  EXPECT_LE(max_rel_error({a}, [](auto& v) { return l2_normalize_rows(v[0]); }), kTol);
  const std::vector<int> targets = {1, -1, 3};
  EXPECT_LE(max_rel_error({a}, [&](auto& v) { return cross_entropy(v[0], targets); }), kTol);
}

TEST(Gradients, StraightThroughAndStopGradient) {
  const Tensor a = random_tensor({2, 3}, 14), b = random_tensor({2, 3}, 15);
  // analytic and numeric derivatives differ by design here, so compare by hand
  Parameter pa{"a", a, Tensor::zeros_like(a), true}, pb{"b", b, Tensor::zeros_like(b), true};
  Tape tape;
  Var va = tape.parameter(pa), vb = tape.parameter(pb);
  tape.backward(sum(add(straight_through(va, vb), stop_gradient(vb))));
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(pa.grad[i], 1.0);
    EXPECT_EQ(pb.grad[i], 0.0);
  }
}

TEST(Gradients, ResizeAndPool) {
  const Tensor x = random_tensor({4, 4, 2}, 16), c = random_tensor({2, 3, 2}, 17);
  EXPECT_LE(max_rel_error({x}, [](auto& v) { return avg_pool2d(v[0], 2); }), kTol);
  EXPECT_LE(max_rel_error({c}, [](auto& v) { return nearest_resize(v[0], 4, 6); }), kTol);
  EXPECT_LE(max_rel_error({c}, [](auto& v) { return nearest_resize(v[0], 3, 5); }), kTol);
}

TEST(Gradients, RotaryAndAttention) {
  const int n = 5, heads = 2, dh = 6;
  auto table = std::make_shared<RotaryTable>(
      make_rotary_table({{0, 0, 0}, {1, 0, 1}, {1, 1, 0}, {2, 1, 1}, {3, 3, 3}}, dh));
  const Tensor q = random_tensor({n, heads * dh}, 18), k = random_tensor({n, heads * dh}, 19),
               v = random_tensor({n, heads * dh}, 20);
  EXPECT_LE(max_rel_error({q}, [&](auto& x) { return rope(x[0], table, heads); }), kTol);
  auto mask = lower_triangle(n);
  EXPECT_LE(max_rel_error({q, k, v}, [&](auto& x) { return masked_attention(x[0], x[1], x[2], mask, heads); }),
            kTol);
  EXPECT_LE(max_rel_error({q, k, v},
                          [&](auto& x) { return attention(x[0], x[1], x[2], mask, table, table, heads); }),
            kTol);
}

TEST(Gradients, ComposedMlp) {
  const Tensor x = random_tensor({4, 6}, 21), w1 = random_tensor({6, 8}, 22), b1 = random_tensor({8}, 23),
               w2 = random_tensor({8, 3}, 24), g = random_tensor({8}, 25, 0.5, 1.5), beta = random_tensor({8}, 26);
  const std::vector<int> targets = {0, 2, 1, 2};
  EXPECT_LE(max_rel_error({x, w1, b1, w2, g, beta},
                          [&](auto& v) {
                            Var h = gelu(layer_norm(linear(v[0], v[1], v[2]), v[4], v[5]));
                            return cross_entropy(matmul(h, v[3]), targets);
                          }),
            kTol);
}

class TokenizerGradients : public ::testing::TestWithParam<int> {};

TEST_P(TokenizerGradients, EveryParameter) {
  const TokenizerConfig c = testutil::tiny_tokenizer_config();
  const std::uint64_t seed = static_cast<std::uint64_t>(GetParam());
  TokenizerModel model(c, seed);
  perturb_parameters(model.params(), seed + 50, 0.2);
  const MockVF vf = make_mock_vf(c);
  const Tensor image = random_tensor({8, 8, 3}, 100 + seed, 0, 1);
  model.init_codebook_from_data({image, random_tensor({8, 8, 3}, 200 + seed, 0, 1)}, seed);
  const auto features = vf.features(image);
  const LossWeights w;
  const int full = model.schedule().total();
  for (int keep : {full, 2}) {
    const double e = store_rel_error(model.params(), [&](Tape& tape) {
      return model.forward_losses(tape, image, features, keep, full, w).total;
    });
    EXPECT_LE(e, kTol) << "keep " << keep;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, TokenizerGradients, ::testing::Range(1, 6));

TEST(Gradients, GeneratorLoss) {
  GeneratorConfig g;
  g.width = 16;
  g.depth = 2;
  g.heads = 2;
  g.num_classes = 3;
  g.ntp_tokens = 2;
  const LevelSchedule schedule = level_schedule(4);
  GeneratorModel model(g, schedule, 8, 5);
  const std::vector<int> codes = {1, 7, 3, 0, 5, 5, 2, 6};
  const HarBatch batch = build_har_batch(codes, 1, schedule, 2, 8, 3);
  EXPECT_LE(store_rel_error(model.params(), [&](Tape& tape) { return model.loss(tape, batch); }, 3), kTol);
}
