/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * This file is part of scamap, a location-based side-channel analysis toolkit.
 */

#include "scamap/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace scamap {

namespace {
std::atomic<int> g_max_threads{0};
}

void set_max_threads(int n) { g_max_threads.store(n < 0 ? 0 : n); }

int max_threads() {
    int n = g_max_threads.load();
    if (n == 0) {
        n = static_cast<int>(std::thread::hardware_concurrency());
        if (n == 0)
            n = 1;
    }
    return n;
}

void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)> &fn) {
    const std::int64_t count = end - begin;
    if (count <= 0)
        return;
    const int workers = static_cast<int>(
        std::min<std::int64_t>(max_threads(), count));
    if (workers <= 1) {
        for (std::int64_t i = begin; i < end; ++i)
            fn(i);
        return;
    }

    std::atomic<std::int64_t> next{begin};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&] {
        for (;;) {
            std::int64_t i = next.fetch_add(1);
            if (i >= end)
                return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error)
                    first_error = std::current_exception();
                next.store(end); // drain remaining work
                return;
            }
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers) - 1);
    for (int t = 1; t < workers; ++t)
        threads.emplace_back(worker);
    worker();
    for (auto &t : threads)
        t.join();
    if (first_error)
        std::rethrow_exception(first_error);
}

} // namespace scamap
