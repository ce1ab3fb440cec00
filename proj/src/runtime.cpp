#include "nledn/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace nledn {

namespace {
std::atomic<int> g_threads{1};
thread_local bool t_inside_parallel = false;
}

int runtime_threads() { return g_threads.load(std::memory_order_relaxed); }

void set_runtime_threads(int n) {
    g_threads.store(std::max(1, n), std::memory_order_relaxed);
}

void parallel_for(int n, const std::function<void(int)>& fn) {
    // no nesting: inner loops run sequentially inside a worker
    const int nt = t_inside_parallel ? 1 : std::min(runtime_threads(), n);
    if (nt <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(nt));
    const int chunk = (n + nt - 1) / nt;
    for (int t = 0; t < nt; ++t) {
        const int lo = t * chunk;
        const int hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            t_inside_parallel = true;
            for (int i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace nledn
