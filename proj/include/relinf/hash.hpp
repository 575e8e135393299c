#pragma once

#include "relinf/types.hpp"

#include <string>

namespace relinf {

/// SHA-256 fingerprint of a parameter vector (spec fields + raw values).
Sha256Digest params_fingerprint(const ParamVector& theta);

Sha256Digest sha256(const void* data, std::size_t len);

std::string to_hex(const Sha256Digest& digest, std::size_t n_bytes = 32);

}  // namespace relinf
