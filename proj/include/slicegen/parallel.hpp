#pragma once

#include <cstddef>
#include <functional>

namespace slicegen {

/// Worker count: SLICEGEN_THREADS when set to a positive integer, otherwise
/// the hardware concurrency (at least 1).
unsigned default_thread_count();

/// Runs fn(i) for i in [0, n) on up to `threads` threads. Each index runs
/// exactly once; the first exception thrown is rethrown after all workers stop.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace slicegen
