#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace icnp {

inline std::size_t resolve_threads(std::size_t requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

// Runs fn(i) for i in [0, n) across `threads` workers (strided assignment).
// fn must be safe to call concurrently for distinct i; any result ordering is
// up to the caller, so determinism is preserved regardless of thread count.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::min(resolve_threads(threads), n == 0 ? std::size_t(1) : n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += threads) fn(i);
        });
    for (auto& th : pool) th.join();
}

}  // namespace icnp
