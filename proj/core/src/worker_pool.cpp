#include "metrik/worker_pool.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace metrik {

int resolve_workers(int requested) {
    if (const char* env = std::getenv("METRIK_WORKERS")) {
        try {
            int value = std::stoi(env);
            if (value > 0) return value;
        } catch (const std::exception&) {
            // Malformed values fall through to the requested count.
        }
    }
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

void run_parallel(int n_tasks, int workers, const std::function<void(int)>& task) {
    if (n_tasks <= 0) return;
    if (workers > n_tasks) workers = n_tasks;
    if (workers <= 1) {
        // Inline execution keeps single-worker runs trivially debuggable.
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_tasks));
        for (int i = 0; i < n_tasks; ++i) {
            try {
                task(i);
            } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
            }
        }
        for (auto& err : errors)
            if (err) std::rethrow_exception(err);
        return;
    }

    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_tasks));
    auto worker = [&] {
        for (;;) {
            int i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= n_tasks) return;
            try {
                task(i);
            } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    // Rethrow deterministically: the lowest failing task wins regardless of
    // which worker hit it first.
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);
}

}  // namespace metrik
