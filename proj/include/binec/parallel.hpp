#pragma once

#include <cstddef>
#include <functional>

namespace binec {

/// Worker count: `requested` when positive, else BINEC_THREADS, else the
/// hardware concurrency (at least 1).
int worker_count(int requested = 0);

/// Runs fn(0..n-1) on up to `threads` workers. The first exception thrown
/// by any task is rethrown on the calling thread.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace binec
