#include "restok/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "restok/errors.hpp"

RESTOK_BEGIN_NAMESPACE

// ---------------------------------------------------------------- patches

Tensor patchify(const Tensor& image, int patch) {
  require_rank(image, 3, "patchify");
  const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (patch < 1 || h % patch || w % patch) {
    throw GeometryError("patchify: image " + shape_string(image.shape()) +
                        " not divisible by patch " + std::to_string(patch));
  }
  const int gh = h / patch, gw = w / patch, pd = patch * patch * c;
  Tensor out({gh * gw, pd});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        const int row = (y / patch) * gw + x / patch;
        const int col = ((y % patch) * patch + x % patch) * c + ch;
        out.at(row, col) = image[(std::size_t(y) * w + x) * c + ch];
      }
    }
  }
  return out;
}

namespace {

std::vector<int> unpatch_index(int image_size, int channels, int patch) {
  const int g = image_size / patch, pd = patch * patch * channels;
  std::vector<int> idx(static_cast<std::size_t>(image_size) * image_size * channels);
  for (int y = 0; y < image_size; ++y) {
    for (int x = 0; x < image_size; ++x) {
      for (int ch = 0; ch < channels; ++ch) {
        const int row = (y / patch) * g + x / patch;
        const int col = ((y % patch) * patch + x % patch) * channels + ch;
        idx[(std::size_t(y) * image_size + x) * channels + ch] = row * pd + col;
      }
    }
  }
  return idx;
}

}  // namespace

Tensor unpatchify(const Tensor& patches, int image_size, int channels, int patch) {
  const auto idx = unpatch_index(image_size, channels, patch);
  if (patches.size() != idx.size()) throw DimensionError("unpatchify: size mismatch");
  Tensor out({image_size, image_size, channels});
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = patches[static_cast<std::size_t>(idx[i])];
  return out;
}

// ---------------------------------------------------------------- MockVF

MockVF::MockVF(const TokenizerConfig& cfg, std::uint64_t seed)
    : patch_(cfg.patch), dim_(cfg.vf_dim) {
  std::mt19937_64 rng(seed ^ 0x6d6f636b5646ULL);
  const int pd = cfg.patch_dim();
  const Real in_std = Real(1) / std::sqrt(Real(pd));
  const Real out_std = Real(1.5) / std::sqrt(Real(cfg.vf_hidden));
  hidden_w_ = &store_.add("vf.hidden.weight", normal_tensor({pd, cfg.vf_hidden}, in_std, rng), false);
  hidden_b_ = &store_.add("vf.hidden.bias", normal_tensor({cfg.vf_hidden}, Real(0.5), rng), false);
  patch_w_ = &store_.add("vf.patch.weight", normal_tensor({cfg.vf_hidden, dim_}, out_std, rng), false);
  patch_b_ = &store_.add("vf.patch.bias", normal_tensor({dim_}, Real(0.1), rng), false);
  const Real global_std = Real(6) / std::sqrt(Real(2 * cfg.vf_hidden));
  global_w_ = &store_.add("vf.global.weight", normal_tensor({2 * cfg.vf_hidden, dim_}, global_std, rng), false);
  global_b_ = &store_.add("vf.global.bias", normal_tensor({dim_}, Real(0.1), rng), false);
}

MockVF::Features MockVF::features(const Tensor& image) const {
  Tape tape(false);
  Tensor p = patchify(image, patch_);
  for (auto& v : p.values()) v = Real(2) * (v - Real(0.5));
  Var hidden = tanh_act(linear(tape.constant(std::move(p)), tape.parameter(*hidden_w_),
                               tape.parameter(*hidden_b_)));
  Var patches = tanh_act(linear(hidden, tape.parameter(*patch_w_), tape.parameter(*patch_b_)));
  // global token reads mean and max pooled hidden units
  const Tensor& h = hidden.value();
  Tensor pooled({1, 2 * h.cols()});
  for (int c = 0; c < h.cols(); ++c) {
    Real sum = 0, peak = h.at(0, c);
    for (int r = 0; r < h.rows(); ++r) {
      sum += h.at(r, c);
      peak = std::max(peak, h.at(r, c));
    }
    pooled[static_cast<std::size_t>(c)] = sum / static_cast<Real>(h.rows());
    pooled[static_cast<std::size_t>(h.cols() + c)] = peak;
  }
  Var global = tanh_act(linear(tape.constant(std::move(pooled)), tape.parameter(*global_w_), tape.parameter(*global_b_)));
  return {global.value(), patches.value()};
}

// ---------------------------------------------------------------- model

TokenizerModel::TokenizerModel(const TokenizerConfig& cfg, std::uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  schedule_ = cfg_.schedule();
  pyramid_ = cfg_.pyramid();
  keep_lengths_ = restok::keep_lengths(schedule_, cfg_.min_tokens);
  const int stride = (cfg_.depth + cfg_.scales - 1) / cfg_.scales;
  for (int s = 1; s < cfg_.scales; ++s) merge_layers_.push_back(stride * s - 1);

  std::mt19937_64 rng(seed);
  const int d = cfg_.width, hidden = cfg_.width * cfg_.mlp_ratio;
  const Real std02 = Real(0.02);
  stem_ = make_linear(store_, "stem", cfg_.patch_dim(), d, Real(1) / std::sqrt(Real(cfg_.patch_dim())), rng);
  for (int n = 0; n < cfg_.depth; ++n) {
    encoder_.push_back(make_block(store_, "encoder." + std::to_string(n), d, hidden, cfg_.depth, rng));
  }
  encoder_norm_ = make_layer_norm(store_, "encoder.norm", d);
  quant_down_ = make_linear(store_, "quant.down", d, cfg_.code_dim, Real(1) / std::sqrt(Real(d)), rng);
  const Real k_inv = Real(1) / Real(cfg_.codebook_size);
  codebook_ = &store_.add("quant.codebook", uniform_tensor({cfg_.codebook_size, cfg_.code_dim}, -k_inv, k_inv, rng));
  quant_up_ = make_linear(store_, "quant.up", cfg_.code_dim, d, Real(1) / std::sqrt(Real(cfg_.code_dim)), rng);
  for (int n = 0; n < cfg_.decoder_depth; ++n) {
    decoder_.push_back(make_block(store_, "decoder." + std::to_string(n), d, hidden, cfg_.decoder_depth, rng));
  }
  decoder_norm_ = make_layer_norm(store_, "decoder.norm", d);
  mask_img_ = &store_.add("decoder.mask_img", normal_tensor({1, d}, std02, rng));
  mask_vf_ = &store_.add("decoder.mask_vf", normal_tensor({1, d}, std02, rng));
  mask_pos_ = &store_.add("decoder.mask_pos", normal_tensor({cfg_.grid() * cfg_.grid(), d}, std02, rng));
  unstem_ = make_linear(store_, "unstem", d, cfg_.patch_dim(), std02, rng);
  align_enc_ = make_linear(store_, "align.enc", cfg_.vf_dim, d, Real(1) / std::sqrt(Real(cfg_.vf_dim)), rng);
  align_dec_ = make_linear(store_, "align.dec", cfg_.vf_dim, d, Real(1) / std::sqrt(Real(cfg_.vf_dim)), rng);

  const int head_dim = d / cfg_.heads;
  const Real theta = static_cast<Real>(cfg_.rope_theta);
  for (int present = 1; present <= pyramid_.count(); ++present) {
    TokenLayout lay = encoder_layout(pyramid_, present, schedule_);
    CachedLayout c;
    c.mask = lay.mask;
    c.rotary = std::make_shared<RotaryTable>(make_rotary_table(lay.positions, head_dim, theta));
    for (const auto& g : lay.groups) {
      if (g.kind == GroupKind::ImageScale) c.scale_sizes.push_back(g.size);
    }
    encoder_layouts_.push_back(std::move(c));
  }
  const GridShape grid{cfg_.grid(), cfg_.grid()};
  for (int keep : keep_lengths_) {
    TokenLayout lay = decoder_layout(grid, keep, schedule_.total());
    CachedLayout c;
    c.mask = lay.mask;
    c.rotary = std::make_shared<RotaryTable>(make_rotary_table(lay.positions, head_dim, theta));
    decoder_layouts_[keep] = std::move(c);
  }
  unpatch_index_ = unpatch_index(cfg_.image_size, cfg_.channels, cfg_.patch);
}

bool TokenizerModel::is_merge_layer(int layer) const {
  return std::find(merge_layers_.begin(), merge_layers_.end(), layer) != merge_layers_.end();
}

void TokenizerModel::check_keep_len(int keep_len) const {
  if (std::find(keep_lengths_.begin(), keep_lengths_.end(), keep_len) == keep_lengths_.end()) {
    throw ConfigError("keep length " + std::to_string(keep_len) + " is not an allowed prefix length");
  }
}

const TokenizerModel::CachedLayout& TokenizerModel::decoder_cache(int keep_len) const {
  check_keep_len(keep_len);
  return decoder_layouts_.at(keep_len);
}

Var TokenizerModel::stem(Tape& tape, const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != cfg_.image_size || image.dim(1) != cfg_.image_size ||
      image.dim(2) != cfg_.channels) {
    throw GeometryError("image " + shape_string(image.shape()) + " does not match configured " +
                        std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.image_size) +
                        "x" + std::to_string(cfg_.channels));
  }
  Tensor p = patchify(image, cfg_.patch);
  for (auto& v : p.values()) v -= Real(0.5);
  Var tokens = apply(tape, stem_, tape.constant(std::move(p)));
  return reshape(tokens, {cfg_.grid(), cfg_.grid(), cfg_.width});
}

EncoderState TokenizerModel::encoder_input(Tape& tape, Var p0) const {
  (void)tape;
  EncoderState st;
  st.first_scale = pyramid_.count() - 1;
  st.scales.push_back(reshape(p0, {cfg_.grid() * cfg_.grid(), cfg_.width}));
  st.latents = residual_latent_init(p0, schedule_, cfg_.residual_latents);
  return st;
}

namespace {

std::vector<Var> flatten(const EncoderState& st) {
  std::vector<Var> parts = st.scales;
  parts.push_back(st.latents);
  return parts;
}

EncoderState split(Var x, int first_scale, const std::vector<int>& scale_sizes, int latents) {
  EncoderState st;
  st.first_scale = first_scale;
  int off = 0;
  for (int n : scale_sizes) {
    st.scales.push_back(slice_rows(x, off, n));
    off += n;
  }
  st.latents = slice_rows(x, off, latents);
  return st;
}

std::vector<int> sizes_of(const EncoderState& st) {
  std::vector<int> out;
  for (const Var& v : st.scales) out.push_back(v.rows());
  return out;
}

}  // namespace

EncoderState TokenizerModel::encoder_layer(Tape& tape, const EncoderState& state, int layer) const {
  if (is_merge_layer(layer)) return residual_merge_block(tape, state, layer);
  const int present = pyramid_.count() - state.first_scale;
  const CachedLayout& lay = encoder_layouts_.at(static_cast<std::size_t>(present - 1));
  const BlockParams& block = encoder_.at(static_cast<std::size_t>(layer));
  Var x = concat_rows(flatten(state));
  x = attention_sublayer(tape, block, x, {lay.mask, lay.rotary, cfg_.heads});
  x = mlp_sublayer(tape, block, x);
  return split(x, state.first_scale, sizes_of(state), schedule_.total());
}

EncoderState TokenizerModel::residual_merge_block(Tape& tape, const EncoderState& state,
                                                  int layer) const {
  if (!is_merge_layer(layer)) {
    throw ConfigError("encoder layer " + std::to_string(layer) + " is not a merging layer");
  }
  if (state.first_scale == 0) {
    throw StateError("residual merge with only the coarsest scale left");
  }
  const int present = pyramid_.count() - state.first_scale;
  const CachedLayout& lay = encoder_layouts_.at(static_cast<std::size_t>(present - 1));
  const BlockParams& block = encoder_.at(static_cast<std::size_t>(layer));
  const int d = cfg_.width;

  Var x = concat_rows(flatten(state));
  x = attention_sublayer(tape, block, x, {lay.mask, lay.rotary, cfg_.heads});
  EncoderState st = split(x, state.first_scale, sizes_of(state), schedule_.total());

  const GridShape fine = pyramid_.scales[static_cast<std::size_t>(st.first_scale)];
  const GridShape coarse = pyramid_.scales[static_cast<std::size_t>(st.first_scale - 1)];
  Var grid = reshape(st.scales.front(), {fine.h, fine.w, d});
  Var merged = avg_pool2d(grid, pyramid_.factor);
  if (cfg_.residual_images) {
    st.scales.front() = reshape(sub(grid, nearest_resize(merged, fine.h, fine.w)), {fine.size(), d});
  }
  st.scales.insert(st.scales.begin(), reshape(merged, {coarse.size(), d}));
  st.first_scale -= 1;

  x = mlp_sublayer(tape, block, concat_rows(flatten(st)));
  return split(x, st.first_scale, sizes_of(st), schedule_.total());
}

EncoderState TokenizerModel::encode_from(Tape& tape, EncoderState state, int first_layer) const {
  for (int n = first_layer; n < cfg_.depth; ++n) state = encoder_layer(tape, state, n);
  Var x = apply(tape, encoder_norm_, concat_rows(flatten(state)));
  return split(x, state.first_scale, sizes_of(state), schedule_.total());
}

EncoderState TokenizerModel::encode(Tape& tape, const Tensor& image) const {
  return encode_from(tape, encoder_input(tape, stem(tape, image)), 0);
}

int nearest_code(const Tensor& codebook, std::span<const Real> vector) {
  const int k = codebook.rows(), d = codebook.cols();
  if (k == 0) throw StateError("empty codebook");
  if (static_cast<int>(vector.size()) != d) throw DimensionError("nearest_code: width mismatch");
  int best = 0;
  Real best_dist = std::numeric_limits<Real>::infinity();
  for (int i = 0; i < k; ++i) {
    Real dist = 0;
    for (int c = 0; c < d; ++c) {
      const Real diff = vector[static_cast<std::size_t>(c)] - codebook.at(i, c);
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = i;
    }
  }
  return best;
}

QuantizeResult TokenizerModel::quantize(Tape& tape, Var latents) const {
  QuantizeResult q;
  q.projected = apply(tape, quant_down_, latents);
  Var book = tape.parameter(*codebook_);
  if (cfg_.l2_codes) {
    q.projected = l2_normalize_rows(q.projected);
    book = l2_normalize_rows(book);
  }
  const Tensor& z = q.projected.value();
  const int n = z.rows(), dc = z.cols();
  q.codes.resize(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    q.codes[static_cast<std::size_t>(r)] =
        nearest_code(book.value(), std::span<const Real>(z.data() + std::size_t(r) * dc, dc));
  }
  if (tape.detach_journal()) {
    // the assignment is piecewise constant, so it is pinned like any detached value
    Tensor ids({n});
    for (int r = 0; r < n; ++r) ids[static_cast<std::size_t>(r)] = static_cast<Real>(q.codes[static_cast<std::size_t>(r)]);
    ids = tape.detach(std::move(ids));
    for (int r = 0; r < n; ++r) q.codes[static_cast<std::size_t>(r)] = static_cast<int>(ids[static_cast<std::size_t>(r)]);
  }
  Var entries = gather_rows(book, q.codes);
  Var codebook_term = mse(entries, stop_gradient(q.projected));
  Var commitment_term = mse(q.projected, stop_gradient(entries));
  q.vq_loss = add(codebook_term, scale(commitment_term, static_cast<Real>(cfg_.commitment)));
  q.quantized = straight_through(q.projected, entries);
  q.zhat = apply(tape, quant_up_, q.quantized);
  return q;
}

Var TokenizerModel::embed_codes(Tape& tape, std::span<const int> codes) const {
  for (int c : codes) {
    if (c < 0 || c >= cfg_.codebook_size) throw DataError("code id " + std::to_string(c) + " out of range");
  }
  Var book = tape.parameter(*codebook_);
  if (cfg_.l2_codes) book = l2_normalize_rows(book);
  return apply(tape, quant_up_, gather_rows(book, codes));
}

Var TokenizerModel::decode(Tape& tape, Var zhat, int keep_len, DecoderBranch branch) const {
  const CachedLayout& lay = decoder_cache(keep_len);
  if (zhat.rows() < keep_len) throw DimensionError("decode: fewer latents than keep length");
  const int cells = cfg_.grid() * cfg_.grid();
  Parameter* mask_token = branch == DecoderBranch::Image ? mask_img_ : mask_vf_;
  const std::vector<int> zeros(static_cast<std::size_t>(cells), 0);
  Var masks = gather_rows(tape.parameter(*mask_token), zeros);
  masks = add(masks, tape.parameter(*mask_pos_));
  Var x = concat_rows({slice_rows(zhat, 0, keep_len), masks});
  for (const BlockParams& block : decoder_) {
    x = attention_sublayer(tape, block, x, {lay.mask, lay.rotary, cfg_.heads});
    x = mlp_sublayer(tape, block, x);
  }
  x = apply(tape, decoder_norm_, x);
  Var grid_tokens = slice_rows(x, keep_len, cells);
  if (branch == DecoderBranch::VisionFeature) return grid_tokens;
  Var patches = add_scalar(apply(tape, unstem_, grid_tokens), Real(0.5));
  return permute(patches, unpatch_index_, {cfg_.image_size, cfg_.image_size, cfg_.channels});
}

namespace {

Var hinge(Var cos, Real margin) { return relu(add_scalar(scale(cos, Real(-1)), margin)); }

}  // namespace

AlignmentLosses TokenizerModel::alignment_losses(Tape& tape, Var coarsest, Var vf_tokens,
                                                 const MockVF::Features& target,
                                                 const LossWeights& w) const {
  AlignmentLosses out;
  Var global_target = apply(tape, align_enc_, tape.constant(target.global));
  out.enc = sum(hinge(cosine_rows(mean_rows(coarsest), global_target), static_cast<Real>(w.margin_enc)));
  if (vf_tokens.valid()) {
    Var patch_target = apply(tape, align_dec_, tape.constant(target.patches));
    out.dec = mean(hinge(cosine_rows(vf_tokens, patch_target), static_cast<Real>(w.margin_dec)));
  } else {
    out.dec = tape.constant(Tensor::scalar(0));
  }
  out.vf = add(scale(out.enc, static_cast<Real>(w.enc)), scale(out.dec, static_cast<Real>(w.dec)));
  return out;
}

Var total_loss(Tape& tape, Var recon, Var target, Var vq_loss, Var vf_loss, const LossWeights& w,
               const LossHooks& hooks) {
  w.validate();
  Var percp = hooks.perceptual ? hooks.perceptual(tape, recon, target) : tape.constant(Tensor::scalar(0));
  Var gan = hooks.adversarial ? hooks.adversarial(tape, recon) : tape.constant(Tensor::scalar(0));
  Var total = scale(mse(recon, target), static_cast<Real>(w.mse));
  total = add(total, scale(percp, static_cast<Real>(w.percp)));
  total = add(total, scale(gan, static_cast<Real>(w.gan)));
  total = add(total, scale(vf_loss, static_cast<Real>(w.vf)));
  return add(total, vq_loss);
}

TokenizerLosses TokenizerModel::forward_losses(Tape& tape, const Tensor& image,
                                               const MockVF::Features& vf, int keep_img,
                                               int keep_vf, const LossWeights& w,
                                               const LossHooks& hooks) const {
  TokenizerLosses out;
  EncoderState enc = encode(tape, image);
  out.quant = quantize(tape, enc.latents);
  out.recon = decode(tape, out.quant.zhat, keep_img, DecoderBranch::Image);
  Var vf_tokens;
  if (keep_vf >= 0 && w.dec > 0) {
    vf_tokens = decode(tape, out.quant.zhat, keep_vf, DecoderBranch::VisionFeature);
  }
  AlignmentLosses align = alignment_losses(tape, enc.scales.front(), vf_tokens, vf, w);
  Var target = tape.constant(image);
  out.mse = mse(out.recon, target);
  out.vq = out.quant.vq_loss;
  out.enc = align.enc;
  out.dec = align.dec;
  out.vf = align.vf;
  out.total = total_loss(tape, out.recon, target, out.vq, out.vf, w, hooks);
  return out;
}

void TokenizerModel::init_codebook_from_data(const std::vector<Tensor>& images, std::uint64_t seed) {
  if (images.empty()) throw DataError("codebook initialization needs at least one image");
  std::vector<std::vector<Real>> rows;
  const int k = cfg_.codebook_size, dc = cfg_.code_dim;
  const std::size_t wanted = static_cast<std::size_t>(k);
  for (const Tensor& image : images) {
    Tape tape(false);
    EncoderState enc = encode(tape, image);
    const Tensor z = apply(tape, quant_down_, enc.latents).value();
    for (int r = 0; r < z.rows(); ++r) rows.emplace_back(z.data() + std::size_t(r) * dc, z.data() + std::size_t(r + 1) * dc);
    if (rows.size() >= 4 * wanted) break;
  }
  std::mt19937_64 rng(seed);
  std::shuffle(rows.begin(), rows.end(), rng);
  std::normal_distribution<double> jitter(0.0, 0.01);
  Tensor& cb = codebook_->value;
  for (int i = 0; i < k; ++i) {
    const auto& src = rows[static_cast<std::size_t>(i) % rows.size()];
    const bool repeat = static_cast<std::size_t>(i) >= rows.size();
    for (int c = 0; c < dc; ++c) {
      cb.at(i, c) = src[static_cast<std::size_t>(c)] + (repeat ? static_cast<Real>(jitter(rng)) : Real(0));
    }
  }
}

std::vector<int> TokenizerModel::tokenize(const Tensor& image) const {
  Tape tape(false);
  EncoderState enc = encode(tape, image);
  return quantize(tape, enc.latents).codes;
}

Tensor TokenizerModel::reconstruct(const Tensor& image, int keep_len) const {
  Tape tape(false);
  EncoderState enc = encode(tape, image);
  QuantizeResult q = quantize(tape, enc.latents);
  return decode(tape, q.zhat, keep_len, DecoderBranch::Image).value();
}

Tensor TokenizerModel::decode_codes(std::span<const int> codes) const {
  Tape tape(false);
  Var zhat = embed_codes(tape, codes);
  return decode(tape, zhat, static_cast<int>(codes.size()), DecoderBranch::Image).value();
}

RESTOK_END_NAMESPACE
