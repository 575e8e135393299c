#include "relinf/grad_cache.hpp"

#include "relinf/hash.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "artifact formats are little-endian; big-endian hosts are unsupported");

namespace relinf {

namespace {

constexpr char kMagic[4] = {'I', 'F', 'G', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in, const std::string& what) {
  T value;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw DataError("truncated gradient cache while reading " + what);
  return value;
}

}  // namespace

void save_grad_cache(const std::string& path, const GradCache& cache) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write gradient cache: " + path);
  out.write(kMagic, 4);
  write_raw(out, kVersion);
  write_raw(out, static_cast<std::uint64_t>(cache.grads.rows()));
  write_raw(out, static_cast<std::uint64_t>(cache.grads.cols()));
  out.write(reinterpret_cast<const char*>(cache.params_hash.data()),
            static_cast<std::streamsize>(cache.params_hash.size()));
  // Row-major payload.
  std::vector<double> row(static_cast<std::size_t>(cache.grads.cols()));
  for (Index i = 0; i < cache.grads.rows(); ++i) {
    for (Index j = 0; j < cache.grads.cols(); ++j)
      row[static_cast<std::size_t>(j)] = cache.grads(i, j);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
  if (!out) throw DataError("write failed: " + path);
}

GradCache load_grad_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open gradient cache: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("bad magic in gradient cache " + path);
  const auto version = read_raw<std::uint32_t>(in, "version");
  if (version != kVersion)
    throw DataError("unsupported gradient cache version " + std::to_string(version));
  const auto n = read_raw<std::uint64_t>(in, "row count");
  const auto p = read_raw<std::uint64_t>(in, "column count");
  GradCache cache;
  if (!in.read(reinterpret_cast<char*>(cache.params_hash.data()),
               static_cast<std::streamsize>(cache.params_hash.size())))
    throw DataError("truncated gradient cache while reading params hash");
  cache.grads.resize(static_cast<Index>(n), static_cast<Index>(p));
  std::vector<double> row(static_cast<std::size_t>(p));
  for (std::uint64_t i = 0; i < n; ++i) {
    if (!in.read(reinterpret_cast<char*>(row.data()),
                 static_cast<std::streamsize>(row.size() * sizeof(double))))
      throw DataError("truncated gradient cache payload in " + path);
    for (std::uint64_t j = 0; j < p; ++j)
      cache.grads(static_cast<Index>(i), static_cast<Index>(j)) =
          row[static_cast<std::size_t>(j)];
  }
  return cache;
}

void require_fresh(const GradCache& cache, const Sha256Digest& params_hash) {
  if (cache.params_hash != params_hash)
    throw StaleCacheError(
        "gradient cache is stale: parameter fingerprint does not match");
}

}  // namespace relinf
