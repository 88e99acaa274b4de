#pragma once

#include <cstddef>
#include <functional>

namespace ucmt {

// Worker cap: UCMT_THREADS if set and positive, else hardware concurrency.
std::size_t worker_threads();

// Runs fn(i) for i in [0, n). Items are independent; callers that reduce
// results must do so afterwards in index order to stay bit-deterministic.
// The first exception thrown by any item is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace ucmt
