#pragma once

#include <Eigen/Core>

#include <functional>

namespace relinf::par {

/// Worker cap; initialized from INFLUX_THREADS (falls back to
/// hardware_concurrency).
int max_threads();
void set_max_threads(int n);

/// Runs fn(i) for i in [0, n). Tasks must write disjoint slots; results
/// are then independent of scheduling. The first exception thrown by a
/// task is rethrown in the caller.
void parallel_for(Eigen::Index n, const std::function<void(Eigen::Index)>& fn);

}  // namespace relinf::par
