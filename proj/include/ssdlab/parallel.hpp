#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace ssdlab {

// Static block partition over [0, n). Each index is processed exactly once
// and workers only write to per-index slots, so results are byte-identical
// for any thread count.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    unsigned t = std::min<unsigned>(threads, static_cast<unsigned>(n));
    std::vector<std::thread> pool;
    pool.reserve(t);
    for (unsigned w = 0; w < t; ++w) {
        std::size_t lo = n * w / t;
        std::size_t hi = n * (w + 1) / t;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace ssdlab
