#pragma once

#include <cstdint>
#include <string>

#include "restok/config.hpp"

RESTOK_BEGIN_NAMESPACE

// Human-readable JSON mirror of RunConfig. Parsing starts from the defaults,
// so a file may list only the keys it changes; unknown keys are rejected.
std::string to_json_string(const RunConfig& rc);
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& rc);

// Applies "section.key=value" (value parsed as JSON, bare words as strings).
void apply_override(RunConfig& rc, const std::string& assignment);

// FNV-1a over the canonical serialization of the tokenizer geometry, and of
// the generator geometry. Checkpoints embed these.
std::uint64_t tokenizer_digest(const TokenizerConfig& cfg);
std::uint64_t generator_digest(const GeneratorConfig& cfg, const TokenizerConfig& tok);

RESTOK_END_NAMESPACE
