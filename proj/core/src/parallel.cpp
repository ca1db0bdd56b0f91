#include "sdikit/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace sdikit {

size_t thread_budget() {
    size_t n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("SDIKIT_THREADS")) {
        char* end = nullptr;
        long cap = std::strtol(env, &end, 10);
        if (end != env && cap > 0 && static_cast<size_t>(cap) < n) {
            n = static_cast<size_t>(cap);
        }
    }
    return n;
}

void parallel_for(size_t n, const std::function<void(size_t)>& f) {
    const size_t workers = std::min(thread_budget(), n);
    if (workers <= 1) {
        for (size_t i = 0; i < n; ++i) f(i);
        return;
    }
    constexpr size_t kBlock = 16;
    std::atomic<size_t> next{0};
    auto run = [&] {
        for (;;) {
            const size_t begin = next.fetch_add(kBlock);
            if (begin >= n) return;
            const size_t end = std::min(begin + kBlock, n);
            for (size_t i = begin; i < end; ++i) f(i);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (size_t w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
}

}  // namespace sdikit
