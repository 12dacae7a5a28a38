#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace projmeas {

/// Run fn(i) for i in [0, n) on up to `workers` threads. Each index writes
/// only its own output slot, and callers reduce slots in index order, so
/// results are bitwise independent of the worker count.
inline void parallel_for(long n, int workers, const std::function<void(long)>& fn) {
    workers = std::max(1, workers);
    if (workers == 1 || n <= 1) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    const int use = static_cast<int>(std::min<long>(workers, n));
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(use));
    for (int t = 0; t < use; ++t) {
        pool.emplace_back([&, t]() {
            try {
                for (long i = t; i < n; i += use) fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
}

}  // namespace projmeas
