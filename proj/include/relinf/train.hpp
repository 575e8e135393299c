#pragma once

#include "relinf/types.hpp"

namespace relinf {

/// Seeded default initialization: zeros for softmax regression, scaled
/// normal draws for the MLP.
Vector default_init(const ModelSpec& spec, std::uint64_t seed);

/// Full-batch deterministic minimization of the weighted training
/// objective to |grad| <= cfg.grad_tol. Throws TrainError (carrying the
/// final gradient norm) if max_iters is exhausted first.
ParamVector train(const Dataset& data, const ModelSpec& spec, const TrainConfig& cfg);

/// Same, warm-started from init (used by leave-one-out retraining).
ParamVector train_from(const Dataset& data, const ModelSpec& spec,
                       const TrainConfig& cfg, const Vector& init);

}  // namespace relinf
