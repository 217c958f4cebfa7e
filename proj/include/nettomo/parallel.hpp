#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace nettomo {

/// Calls fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// handled by exactly one worker, so writes to disjoint outputs need no
/// synchronisation. The first exception thrown is rethrown.
template <class Fn>
void parallel_for(std::ptrdiff_t n, int threads, Fn &&fn) {
    const auto workers = static_cast<std::ptrdiff_t>(
        std::max(1, std::min<int>(threads, static_cast<int>(std::max<std::ptrdiff_t>(n, 1)))));
    if (workers <= 1) {
        for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::ptrdiff_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::ptrdiff_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto &t : pool) t.join();
    for (auto &e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace nettomo
