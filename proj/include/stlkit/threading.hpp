#pragma once

#include <cstddef>
#include <functional>

namespace stlkit {

// Number of worker threads: hardware concurrency capped by the STL_THREADS
// environment variable (read once).
int worker_count();

// Runs f(begin, end) over a static partition of [0, n) into contiguous
// chunks, one per worker. Callers keep summation order inside each index,
// so results are bit-identical for any thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& f);

}  // namespace stlkit
