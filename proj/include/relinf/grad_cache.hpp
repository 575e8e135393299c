#pragma once

#include "relinf/types.hpp"

#include <string>

namespace relinf {

// Cache file layout (little-endian): magic "IFGC", u32 version=1,
// u64 N, u64 P, 32-byte params hash, then N*P doubles row-major.
void save_grad_cache(const std::string& path, const GradCache& cache);
GradCache load_grad_cache(const std::string& path);

/// Throws StaleCacheError unless the cache fingerprint matches.
void require_fresh(const GradCache& cache, const Sha256Digest& params_hash);

}  // namespace relinf
