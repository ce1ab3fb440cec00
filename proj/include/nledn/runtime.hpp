#pragma once

#include <functional>

namespace nledn {

// Worker-thread cap shared by all kernels and the eval loop. Defaults to 1;
// initialized from the NLEDN_THREADS environment variable by the CLI.
int runtime_threads();
void set_runtime_threads(int n);

// Runs fn(0..n-1). Splits into contiguous chunks across runtime_threads()
// when that is > 1. Each index is processed exactly once in ascending order
// within its chunk, so numeric results match the sequential run bit for bit
// whenever iterations are independent.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace nledn
