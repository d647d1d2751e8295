#pragma once

#include <functional>

namespace evf {

// worker cap: EVF_THREADS env var, else hardware concurrency
int worker_threads();

// runs fn(0..n-1); deterministic as long as fn(i) writes only slot i
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace evf
