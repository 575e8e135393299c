#include "relinf/hash.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "artifact formats are little-endian; big-endian hosts are unsupported");

namespace relinf {

Sha256Digest sha256(const void* data, std::size_t len) {
  Sha256Digest out{};
  unsigned int out_len = 0;
  EVP_Digest(data, len, out.data(), &out_len, EVP_sha256(), nullptr);
  return out;
}

Sha256Digest params_fingerprint(const ParamVector& theta) {
  const ModelSpec& spec = theta.spec;
  std::vector<std::uint8_t> buf;
  buf.reserve(64 + static_cast<std::size_t>(theta.values.size()) * sizeof(double));
  auto push = [&buf](const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  };
  const std::int32_t family = spec.family == ModelFamily::SoftmaxRegression ? 0 : 1;
  const std::int32_t d = spec.d, c = spec.c, hidden = spec.hidden;
  const std::int32_t bias = spec.bias ? 1 : 0;
  push(&family, sizeof(family));
  push(&d, sizeof(d));
  push(&c, sizeof(c));
  push(&hidden, sizeof(hidden));
  push(&bias, sizeof(bias));
  push(&spec.l2, sizeof(spec.l2));
  push(theta.values.data(), static_cast<std::size_t>(theta.values.size()) * sizeof(double));
  return sha256(buf.data(), buf.size());
}

std::string to_hex(const Sha256Digest& digest, std::size_t n_bytes) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(n_bytes * 2);
  for (std::size_t i = 0; i < n_bytes && i < digest.size(); ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

}  // namespace relinf
