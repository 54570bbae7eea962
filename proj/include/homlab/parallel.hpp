#pragma once

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <future>
#include <thread>
#include <vector>

namespace homlab {

/// True when HOMLAB_DETERMINISTIC=1: all work runs serially in index order.
inline bool deterministic_mode() {
    const char* v = std::getenv("HOMLAB_DETERMINISTIC");
    return v != nullptr && std::strcmp(v, "1") == 0;
}

inline unsigned worker_count() {
    if (deterministic_mode()) return 1;
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Evaluates fn(0..n-1) and returns the results in index order. Work is
/// spread over a bounded set of async tasks unless deterministic mode is on.
/// Each fn(i) must be independent of the others.
template <class Fn>
auto parallel_map(std::size_t n, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
    using R = decltype(fn(std::size_t{}));
    std::vector<R> out;
    out.reserve(n);
    const std::size_t workers = worker_count();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) out.push_back(fn(i));
        return out;
    }
    for (std::size_t start = 0; start < n; start += workers) {
        std::vector<std::future<R>> batch;
        const std::size_t stop = std::min(n, start + workers);
        for (std::size_t i = start; i < stop; ++i) batch.push_back(std::async(std::launch::async, fn, i));
        for (auto& f : batch) out.push_back(f.get());
    }
    return out;
}

}  // namespace homlab
