#include "cbfkit/threading.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace cbfkit {

std::size_t worker_count() {
    static const std::size_t count = [] {
        if (const char* s = std::getenv("CBF_KIT_THREADS")) {
            long v = std::strtol(s, nullptr, 10);
            if (v >= 1) return static_cast<std::size_t>(v);
            return static_cast<std::size_t>(1);
        }
        unsigned hw = std::thread::hardware_concurrency();
        return static_cast<std::size_t>(hw ? hw : 1);
    }();
    return count;
}

void parallel_blocks(std::size_t count, const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    std::size_t workers = std::min(worker_count(), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto run = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace cbfkit
