#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "restok/params.hpp"

RESTOK_BEGIN_NAMESPACE

// Little-endian checkpoint layout:
//   "RSTK" | u32 version | u64 config digest | u32 value bytes (4 or 8) | u32 count
//   per parameter: u32 name length | name | u32 rank | u32 extents[rank] | values
void save_checkpoint(const std::string& path, const ParameterStore& params, std::uint64_t digest);
// Loads into an already constructed store. A digest mismatch, unknown name or
// shape mismatch throws DataError; a missing file throws StageError.
void load_checkpoint(const std::string& path, ParameterStore& params, std::uint64_t digest);

struct TokenRecord {
  int class_id = 0;
  std::vector<int> codes;
};

// "RTKD" | u32 version | u32 count | per record: i32 class | u32 n | i32 codes[n]
void write_token_dump(const std::string& path, const std::vector<TokenRecord>& records);
std::vector<TokenRecord> read_token_dump(const std::string& path);

RESTOK_END_NAMESPACE
