#pragma once

#include <cstddef>
#include <functional>

namespace ffebm {

/// Thread count from FFEBM_THREADS, or `fallback` when unset or invalid.
std::size_t threads_from_env(std::size_t fallback = 1);

/// Runs both tasks, concurrently when `concurrent` is set. Exceptions propagate after both finish.
void run_both(const std::function<void()>& a, const std::function<void()>& b, bool concurrent);

}  // namespace ffebm
