#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace vmr {

/// Worker count: explicit value > 0 wins, else VMR_THREADS, else hardware.
inline int resolve_threads(int requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("VMR_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

/// Static-partition parallel loop. Results must be written to per-index
/// storage by the body; reductions happen afterwards in index order, so the
/// outcome is independent of the thread count.
inline void parallel_for(int begin, int end, int threads,
                         const std::function<void(int)>& body) {
    const int n = end - begin;
    if (n <= 0) return;
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (int i = begin; i < end; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([=, &body]() {
            for (int i = begin + t; i < end; i += threads) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace vmr
