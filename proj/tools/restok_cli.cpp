// restok: train the tokenizer and generator on synthetic data, sample, evaluate
// and dump attention masks.
//
//   restok train-tokenizer [--config f] [--seed n] [--out dir] [--override k=v]...
//   restok dump-codes | train-generator | sample | eval   (same flags)
//   restok inspect-mask [--mask generator|encoder|decoder] [--format ascii|csv]
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "restok/config_io.hpp"
#include "restok/errors.hpp"
#include "restok/pipeline.hpp"

using namespace restok;

namespace {

void set_log_level() {
  const char* env = std::getenv("RESTOK_LOG");
  if (!env) {
    spdlog::set_level(spdlog::level::info);
    return;
  }
  const spdlog::level::level_enum lvl = spdlog::level::from_str(env);
  spdlog::set_level(lvl);
}

}  // namespace

int main(int argc, char** argv) {
  set_log_level();
  CLI::App app{"Hierarchical residual tokenizer and HAR generator"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::string mask_kind = "generator";
  std::string mask_format = "ascii";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { seed = s; seed_set = true; },
                                            "run seed");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--override", overrides, "section.key=value")->allow_extra_args(false);
  };

  const std::vector<std::string> stages = {"train-tokenizer", "dump-codes", "train-generator", "sample", "eval"};
  for (const auto& name : stages) add_common(app.add_subcommand(name));
  CLI::App* inspect = app.add_subcommand("inspect-mask", "print an attention mask");
  add_common(inspect);
  inspect->add_option("--mask", mask_kind, "generator, encoder or decoder");
  inspect->add_option("--format", mask_format, "ascii or csv");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig rc = config_path.empty() ? default_run_config() : load_run_config(config_path);
    for (const auto& o : overrides) apply_override(rc, o);
    if (seed_set) rc.seed = seed;
    if (!out_dir.empty()) rc.out_dir = out_dir;
    rc.validate();

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "train-tokenizer") {
      run_train_tokenizer(rc);
    } else if (cmd == "dump-codes") {
      run_dump_codes(rc);
    } else if (cmd == "train-generator") {
      run_train_generator(rc);
    } else if (cmd == "sample") {
      run_sample(rc);
    } else if (cmd == "eval") {
      run_eval(rc);
    } else {
      if (mask_format != "ascii" && mask_format != "csv") throw ConfigError("--format must be ascii or csv");
      run_inspect_mask(rc, mask_kind, mask_format == "csv" ? MaskFormat::Csv : MaskFormat::Ascii, std::cout);
    }
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return 2;
  } catch (const GeometryError& e) {
    spdlog::error("config error: {}", e.what());
    return 2;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return 3;
  } catch (const NumericError& e) {
    spdlog::error("numeric failure: {}", e.what());
    return 4;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
