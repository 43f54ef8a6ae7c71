#pragma once

#include <functional>

namespace metrik {

/// Number of worker threads to use. `requested` <= 0 means "pick a default"
/// (the hardware concurrency, at least 1). The METRIK_WORKERS environment
/// variable, when set to a positive integer, overrides the request.
int resolve_workers(int requested);

/// Runs `task(0) .. task(n_tasks - 1)` on up to `workers` threads.
///
/// Tasks are handed out in index order from a shared counter. Each task must
/// write only to its own result slot so that the outcome is identical for any
/// worker count. Exceptions are captured per task; after all workers finish,
/// the exception of the lowest failing task index is rethrown.
void run_parallel(int n_tasks, int workers, const std::function<void(int)>& task);

}  // namespace metrik
