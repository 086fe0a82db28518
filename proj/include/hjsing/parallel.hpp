#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace hjsing {

/// Runs fn(i) for i in [0, count) on `jobs` threads with static contiguous chunks.
/// fn must only write to per-index slots; results are then independent of `jobs`.
/// If several indices throw, the exception of the smallest index is rethrown.
template <class F>
void parallel_for(std::size_t count, int jobs, F&& fn) {
    if (jobs <= 1 || count < 2) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
    std::vector<std::thread> pool;
    std::mutex mu;
    std::exception_ptr first;
    std::size_t first_index = count;
    for (std::size_t w = 0; w < workers; ++w) {
        std::size_t begin = count * w / workers, end = count * (w + 1) / workers;
        pool.emplace_back([&, begin, end] {
            for (std::size_t i = begin; i < end; ++i) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (i < first_index) {
                        first_index = i;
                        first = std::current_exception();
                    }
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first) std::rethrow_exception(first);
}

}  // namespace hjsing
