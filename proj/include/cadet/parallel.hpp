#pragma once

#include <cstddef>
#include <functional>

namespace cadet {

/// Worker count: CADET_THREADS when set and positive, else hardware concurrency.
unsigned default_threads();

/// Runs fn(task) for task in [0, n_tasks) on up to `threads` workers
/// (0 = default_threads()). Tasks are handed out in fixed contiguous chunks,
/// so any reduction the caller performs per task is independent of the
/// worker count. The first exception thrown by a task is rethrown.
void parallel_for(std::size_t n_tasks, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace cadet
