#pragma once

#include <cstdint>
#include <functional>

namespace steadyop {

/// Worker count: `requested` if positive, else $STEADYOP_THREADS, else the
/// hardware concurrency (at least 1).
int resolve_threads(int requested = 0);

/// Runs body(i) for i in [0, n) on up to `threads` workers. Each index is
/// processed exactly once; callers write results into per-index slots and
/// reduce in index order, so outcomes do not depend on the worker count.
/// The exception of the lowest failing index is rethrown.
void parallel_for(std::int64_t n, int threads, const std::function<void(std::int64_t)>& body);

}  // namespace steadyop
