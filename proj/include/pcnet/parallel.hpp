#pragma once

#include <cstddef>
#include <functional>

namespace pcnet {

/// Worker count used when callers pass 0: PCNET_THREADS if set, else the
/// value from set_default_workers, else the hardware concurrency.
std::size_t default_workers();
void set_default_workers(std::size_t n);

/// Calls fn(i) for every i in [0, n) on up to `workers` threads. Each index
/// is visited exactly once; callers write results into per-index slots so
/// output never depends on the worker count. The first exception thrown by
/// any task is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t workers = 0);

}  // namespace pcnet
