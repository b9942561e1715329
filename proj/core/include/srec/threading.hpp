#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace srec {

// Fork-join loop over [0, n).  Every index writes only its own output slot,
// so the result is bitwise independent of the worker count; reductions are
// done by the caller afterwards in fixed index order.  threads == 0 uses the
// hardware concurrency, threads == 1 runs inline.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (threads == 0) {
        threads = static_cast<int>(std::thread::hardware_concurrency());
        if (threads < 1) threads = 1;
    }
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n ? n : 1);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = n * w / workers;
        const std::size_t end = n * (w + 1) / workers;
        pool.emplace_back([begin, end, &fn] {
            for (std::size_t i = begin; i < end; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace srec
