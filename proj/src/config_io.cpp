#include "restok/config_io.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "restok/errors.hpp"

RESTOK_BEGIN_NAMESPACE

using nlohmann::json;

namespace {

const char* cfg_kind_name(CfgKind k) {
  switch (k) {
    case CfgKind::Off: return "off";
    case CfgKind::Step: return "step";
    case CfgKind::Linear: return "linear";
  }
  return "off";
}

CfgKind cfg_kind_from(const std::string& s) {
  if (s == "off") return CfgKind::Off;
  if (s == "step") return CfgKind::Step;
  if (s == "linear") return CfgKind::Linear;
  throw ConfigError("unknown cfg.kind '" + s + "' (expected off, step or linear)");
}

json tokenizer_json(const TokenizerConfig& t) {
  return {{"image_size", t.image_size}, {"channels", t.channels}, {"patch", t.patch},
          {"scales", t.scales}, {"pool_factor", t.pool_factor}, {"levels", t.levels},
          {"depth", t.depth}, {"decoder_depth", t.decoder_depth}, {"width", t.width},
          {"heads", t.heads}, {"mlp_ratio", t.mlp_ratio}, {"codebook_size", t.codebook_size},
          {"code_dim", t.code_dim}, {"commitment", t.commitment}, {"l2_codes", t.l2_codes}, {"codebook_data_init", t.codebook_data_init}, {"vf_dim", t.vf_dim},
          {"vf_hidden", t.vf_hidden}, {"min_tokens", t.min_tokens},
          {"residual_latents", t.residual_latents}, {"residual_images", t.residual_images},
          {"rope_theta", t.rope_theta}};
}

json generator_json(const GeneratorConfig& g) {
  return {{"width", g.width}, {"depth", g.depth}, {"heads", g.heads}, {"mlp_ratio", g.mlp_ratio},
          {"num_classes", g.num_classes}, {"ntp_tokens", g.ntp_tokens},
          {"class_dropout", g.class_dropout}};
}

json train_json(const TrainConfig& t) {
  return {{"steps", t.steps}, {"batch_size", t.batch_size}, {"log_every", t.log_every},
          {"time_budget_s", t.time_budget_s}, {"lr", t.optim.lr}, {"min_lr", t.optim.min_lr},
          {"beta1", t.optim.beta1}, {"beta2", t.optim.beta2}, {"eps", t.optim.eps},
          {"weight_decay", t.optim.weight_decay}, {"warmup_steps", t.optim.warmup_steps},
          {"grad_clip", t.optim.grad_clip}};
}

json to_json(const RunConfig& rc) {
  json j;
  j["tokenizer"] = tokenizer_json(rc.tokenizer);
  j["loss"] = {{"mse", rc.loss.mse}, {"percp", rc.loss.percp}, {"gan", rc.loss.gan},
               {"vf", rc.loss.vf}, {"enc", rc.loss.enc}, {"dec", rc.loss.dec},
               {"margin_enc", rc.loss.margin_enc}, {"margin_dec", rc.loss.margin_dec}};
  j["dropout"] = {{"enabled", rc.dropout.enabled}, {"full_keep_prob", rc.dropout.full_keep_prob}};
  j["generator"] = generator_json(rc.generator);
  j["cfg"] = {{"kind", cfg_kind_name(rc.cfg.kind)}, {"start_ratio", rc.cfg.start_ratio},
              {"max_value", rc.cfg.max_value}, {"top_k", rc.cfg.top_k}, {"top_p", rc.cfg.top_p},
              {"temperature", rc.cfg.temperature}};
  j["tokenizer_train"] = train_json(rc.tokenizer_train);
  j["generator_train"] = train_json(rc.generator_train);
  j["data"] = {{"train_images", rc.data.train_images}, {"eval_images", rc.data.eval_images},
               {"num_classes", rc.data.num_classes}};
  j["seed"] = rc.seed;
  j["samples_per_class"] = rc.samples_per_class;
  j["out_dir"] = rc.out_dir;
  return j;
}

// Walks `over` and copies each leaf into `base`, which must already hold the key.
void merge_into(json& base, const json& over, const std::string& path) {
  if (!over.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (auto it = over.begin(); it != over.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_into(slot, it.value(), key);
      continue;
    }
    const bool numeric_ok = slot.is_number() && it.value().is_number();
    if (slot.type() != it.value().type() && !numeric_ok) {
      throw ConfigError("config key '" + key + "' has the wrong type");
    }
    if (slot.is_number_integer() && !it.value().is_number_integer()) {
      throw ConfigError("config key '" + key + "' expects an integer");
    }
    slot = it.value();
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  out = j.at(key).get<T>();
}

RunConfig from_json(const json& j) {
  RunConfig rc;
  const json& t = j.at("tokenizer");
  TokenizerConfig& tk = rc.tokenizer;
  read(t, "image_size", tk.image_size);
  read(t, "channels", tk.channels);
  read(t, "patch", tk.patch);
  read(t, "scales", tk.scales);
  read(t, "pool_factor", tk.pool_factor);
  read(t, "levels", tk.levels);
  read(t, "depth", tk.depth);
  read(t, "decoder_depth", tk.decoder_depth);
  read(t, "width", tk.width);
  read(t, "heads", tk.heads);
  read(t, "mlp_ratio", tk.mlp_ratio);
  read(t, "codebook_size", tk.codebook_size);
  read(t, "code_dim", tk.code_dim);
  read(t, "commitment", tk.commitment);
  read(t, "codebook_data_init", tk.codebook_data_init);
  read(t, "l2_codes", tk.l2_codes);
  read(t, "vf_dim", tk.vf_dim);
  read(t, "vf_hidden", tk.vf_hidden);
  read(t, "min_tokens", tk.min_tokens);
  read(t, "residual_latents", tk.residual_latents);
  read(t, "residual_images", tk.residual_images);
  read(t, "rope_theta", tk.rope_theta);

  const json& l = j.at("loss");
  read(l, "mse", rc.loss.mse);
  read(l, "percp", rc.loss.percp);
  read(l, "gan", rc.loss.gan);
  read(l, "vf", rc.loss.vf);
  read(l, "enc", rc.loss.enc);
  read(l, "dec", rc.loss.dec);
  read(l, "margin_enc", rc.loss.margin_enc);
  read(l, "margin_dec", rc.loss.margin_dec);

  read(j.at("dropout"), "enabled", rc.dropout.enabled);
  read(j.at("dropout"), "full_keep_prob", rc.dropout.full_keep_prob);

  const json& g = j.at("generator");
  read(g, "width", rc.generator.width);
  read(g, "depth", rc.generator.depth);
  read(g, "heads", rc.generator.heads);
  read(g, "mlp_ratio", rc.generator.mlp_ratio);
  read(g, "num_classes", rc.generator.num_classes);
  read(g, "ntp_tokens", rc.generator.ntp_tokens);
  read(g, "class_dropout", rc.generator.class_dropout);

  const json& c = j.at("cfg");
  rc.cfg.kind = cfg_kind_from(c.at("kind").get<std::string>());
  read(c, "start_ratio", rc.cfg.start_ratio);
  read(c, "max_value", rc.cfg.max_value);
  read(c, "top_k", rc.cfg.top_k);
  read(c, "top_p", rc.cfg.top_p);
  read(c, "temperature", rc.cfg.temperature);

  for (auto [name, tc] : {std::pair{"tokenizer_train", &rc.tokenizer_train},
                          std::pair{"generator_train", &rc.generator_train}}) {
    const json& s = j.at(name);
    read(s, "steps", tc->steps);
    read(s, "batch_size", tc->batch_size);
    read(s, "log_every", tc->log_every);
    read(s, "time_budget_s", tc->time_budget_s);
    read(s, "lr", tc->optim.lr);
    read(s, "min_lr", tc->optim.min_lr);
    read(s, "beta1", tc->optim.beta1);
    read(s, "beta2", tc->optim.beta2);
    read(s, "eps", tc->optim.eps);
    read(s, "weight_decay", tc->optim.weight_decay);
    read(s, "warmup_steps", tc->optim.warmup_steps);
    read(s, "grad_clip", tc->optim.grad_clip);
  }
  read(j.at("data"), "train_images", rc.data.train_images);
  read(j.at("data"), "eval_images", rc.data.eval_images);
  read(j.at("data"), "num_classes", rc.data.num_classes);
  read(j, "seed", rc.seed);
  read(j, "samples_per_class", rc.samples_per_class);
  read(j, "out_dir", rc.out_dir);
  return rc;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::string to_json_string(const RunConfig& rc) { return to_json(rc).dump(2) + "\n"; }

RunConfig run_config_from_json(const std::string& text) {
  json over;
  try {
    over = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  json base = to_json(default_run_config());
  merge_into(base, over, "");
  RunConfig rc;
  try {
    rc = from_json(base);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  rc.validate();
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str());
}

void save_run_config(const std::string& path, const RunConfig& rc) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << to_json_string(rc);
}

void apply_override(RunConfig& rc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json over = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos;) {
    parts.push_back(rest.substr(0, pos));
    rest = rest.substr(pos + 1);
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) over = json{{*it, over}};
  json base = to_json(rc);
  merge_into(base, over, "");
  try {
    rc = from_json(base);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("override ") + key + ": " + e.what());
  }
}

std::uint64_t tokenizer_digest(const TokenizerConfig& cfg) {
  return fnv1a("tokenizer:" + tokenizer_json(cfg).dump());
}

std::uint64_t generator_digest(const GeneratorConfig& cfg, const TokenizerConfig& tok) {
  json j = generator_json(cfg);
  j["levels"] = tok.levels;
  j["codebook_size"] = tok.codebook_size;
  return fnv1a("generator:" + j.dump());
}

RESTOK_END_NAMESPACE
