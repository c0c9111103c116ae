// Double-precision half of the acceptance run.
#include <chrono>
#include <random>

#include "acceptance.hpp"
#include "restok/gradcheck.hpp"
#include "restok/pipeline.hpp"
#include "restok/tokenizer.hpp"

static_assert(sizeof(restok::Real) == sizeof(double));

namespace acceptance {

using namespace restok;

namespace {

// 8x8 image, 4x4 grid, scales 2x2 and 4x4, latent levels 1+1+2.
TokenizerConfig toy_config() {
  TokenizerConfig c;
  c.image_size = 8;
  c.patch = 2;
  c.scales = 2;
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

Tensor uniform_image(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t({size, size, 3});
  for (auto& v : t.values()) v = u(rng);
  return t;
}

}  // namespace

GradientOutcome check_tokenizer_gradients(double eps) {
  const auto start = std::chrono::steady_clock::now();
  const TokenizerConfig c = toy_config();
  TokenizerModel model(c, 3);
  // off the initialization: fresh residual latents are nearly zero and sit
  // inside the layer norm epsilon
  std::mt19937_64 rng(53);
  std::normal_distribution<double> noise(0.0, 0.2);
  for (Parameter* p : model.params().all()) {
    if (!p->trainable) continue;
    for (auto& v : p->value.values()) v += noise(rng);
  }
  const Tensor image = uniform_image(c.image_size, 103);
  model.init_codebook_from_data({image, uniform_image(c.image_size, 203)}, 3);
  const MockVF vf = make_mock_vf(c);
  const auto features = vf.features(image);
  const LossWeights weights;
  const int full = model.schedule().total();

  GradientOutcome out;
  for (int keep : {full, 2}) {
    auto loss = [&](Tape& tape) { return model.forward_losses(tape, image, features, keep, full, weights).total; };
    ParameterStore& store = model.params();
    store.zero_grad();
    DetachJournal journal;
    {
      Tape tape;
      tape.set_detach_journal(&journal);
      tape.backward(loss(tape));
    }
    journal.replay = true;
    for (Parameter* p : store.all()) {
      if (!p->trainable) continue;
      const auto numeric = parameter_finite_difference(*p, [&] {
        Tape tape(false);
        journal.cursor = 0;
        tape.set_detach_journal(&journal);
        return loss(tape).value().item();
      }, static_cast<Real>(eps));
      const auto cmp = compare_gradients(p->grad.values(), numeric);
      out.coordinates += cmp.checked;
      if (cmp.max_relative_error > out.worst_relative_error) {
        out.worst_relative_error = cmp.max_relative_error;
        out.worst_parameter = p->name + " (keep " + std::to_string(keep) + ")";
      }
    }
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace acceptance
