#pragma once

#include <cstddef>
#include <functional>

namespace ulmflow {

/// Worker count from ULMFLOW_WORKERS, else the hardware concurrency (>= 1).
int default_worker_count();

/// Calls fn(i) for every i in [0, n) on up to `workers` threads. Work is
/// handed out in index order; results must be written to per-index slots.
/// The first exception thrown by fn is rethrown after all workers stop.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace ulmflow
