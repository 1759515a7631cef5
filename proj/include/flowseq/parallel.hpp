#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace flowseq {

// Runs fn(i) for i in [0, n) on up to `max_threads` workers. Results must be
// written to per-index slots by the caller, which keeps the join order
// deterministic. The first exception thrown (lowest index) is rethrown.
template <class Fn>
void parallel_for(std::size_t n, std::size_t max_threads, Fn&& fn) {
    const std::size_t workers = std::max<std::size_t>(1, std::min(n, max_threads));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    std::size_t first_index = n;
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(err_mu);
                        if (i < first_index) {
                            first_index = i;
                            first_error = std::current_exception();
                        }
                    }
                }
            });
    }
    if (first_error) std::rethrow_exception(first_error);
}

inline std::size_t hardware_threads() {
    return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace flowseq
