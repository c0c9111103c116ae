#include "restok/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "restok/errors.hpp"

RESTOK_BEGIN_NAMESPACE

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kCheckpointMagic[4] = {'R', 'S', 'T', 'K'};
constexpr char kDumpMagic[4] = {'R', 'T', 'K', 'D'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("truncated file " + path);
  return v;
}

std::ifstream open_in(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError(std::string("missing ") + what + " " + path);
  return in;
}

void check_magic(std::istream& in, const char (&magic)[4], const std::string& path) {
  char m[4];
  in.read(m, 4);
  if (!in || std::memcmp(m, magic, 4) != 0) throw DataError(path + " has the wrong file magic");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) throw DataError(path + ": unsupported version " + std::to_string(version));
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& params, std::uint64_t digest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, digest);
  put<std::uint32_t>(out, sizeof(Real));
  const auto all = params.all();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(all.size()));
  for (const Parameter* p : all) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rank()));
    for (int e : p->value.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(Real)));
  }
  if (!out) throw DataError("write failed for " + path);
}

void load_checkpoint(const std::string& path, ParameterStore& params, std::uint64_t digest) {
  std::ifstream in = open_in(path, "checkpoint");
  check_magic(in, kCheckpointMagic, path);
  const auto stored = get<std::uint64_t>(in, path);
  if (stored != digest) {
    throw DataError(path + ": config digest mismatch (checkpoint was written for a different configuration)");
  }
  const auto bytes = get<std::uint32_t>(in, path);
  if (bytes != 4 && bytes != 8) throw DataError(path + ": bad value width");
  const auto count = get<std::uint32_t>(in, path);
  if (count != params.size()) throw DataError(path + ": parameter count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, path);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw DataError("truncated file " + path);
    if (!params.contains(name)) throw DataError(path + ": unknown parameter " + name);
    Parameter& p = params.get(name);
    const auto rank = get<std::uint32_t>(in, path);
    std::vector<int> shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<int>(get<std::uint32_t>(in, path)));
    if (shape != p.value.shape()) throw DataError(path + ": shape mismatch for " + name);
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      p.value[k] = bytes == 4 ? static_cast<Real>(get<float>(in, path)) : static_cast<Real>(get<double>(in, path));
    }
  }
}

void write_token_dump(const std::string& path, const std::vector<TokenRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write token dump " + path);
  out.write(kDumpMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const TokenRecord& r : records) {
    put<std::int32_t>(out, r.class_id);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.codes.size()));
    for (int c : r.codes) put<std::int32_t>(out, c);
  }
  if (!out) throw DataError("write failed for " + path);
}

std::vector<TokenRecord> read_token_dump(const std::string& path) {
  std::ifstream in = open_in(path, "token dump");
  check_magic(in, kDumpMagic, path);
  const auto count = get<std::uint32_t>(in, path);
  std::vector<TokenRecord> out(count);
  for (TokenRecord& r : out) {
    r.class_id = get<std::int32_t>(in, path);
    const auto n = get<std::uint32_t>(in, path);
    r.codes.resize(n);
    for (int& c : r.codes) c = get<std::int32_t>(in, path);
  }
  return out;
}

RESTOK_END_NAMESPACE
