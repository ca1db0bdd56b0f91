#pragma once

#include <cstddef>
#include <functional>

namespace sdikit {

/// Worker cap: min(hardware_concurrency, SDIKIT_THREADS if set).
size_t thread_budget();

/// Runs f(i) for i in [0, n). Work is handed out in fixed-size blocks and
/// every f(i) writes only to slot i of caller-owned storage, so results are
/// identical for any worker count (including 1).
void parallel_for(size_t n, const std::function<void(size_t)>& f);

}  // namespace sdikit
