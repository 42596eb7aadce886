#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace bbmlab {

/// Environment variable that caps the worker count regardless of config or flags.
inline constexpr const char* kWorkerCapEnv = "BBMLAB_MAX_WORKERS";

inline int effective_workers(int requested) {
    int w = requested > 0 ? requested : int(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* cap = std::getenv(kWorkerCapEnv)) {
        const int c = std::atoi(cap);
        if (c > 0 && c < w) w = c;
    }
    return std::max(1, w);
}

/// Evaluates fn(i) for i in [0, n) on up to `workers` threads and returns the results in index
/// order. Each index must derive its randomness from its own stream, so the output does not
/// depend on scheduling. The first exception thrown by any work unit is rethrown.
template <class Fn>
auto parallel_map(std::size_t n, int workers, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
    using R = decltype(fn(std::size_t{}));
    std::vector<R> out(n);
    const int w = std::min<int>(effective_workers(workers), int(std::max<std::size_t>(n, 1)));
    if (w <= 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr err;
    std::mutex err_mu;
    auto body = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n || failed.load()) return;
            try {
                out[i] = fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!err) err = std::current_exception();
                failed = true;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(w));
    for (int k = 0; k < w; ++k) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
    return out;
}

}  // namespace bbmlab
