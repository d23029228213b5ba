#pragma once

#include <cstddef>
#include <functional>

namespace qpkpd {

// Run body(i) for i in [0, n) on `workers` threads.
//
// Indices are dealt round-robin to a fixed number of threads, each index is
// processed exactly once, and the caller's containers are indexed by i, so
// results land in deterministic slots no matter how many workers run or how
// they are scheduled.  workers <= 1 executes inline.
//
// Exceptions thrown by the body are captured and the first one (by index) is
// rethrown after all threads join.
void parallel_for(std::size_t n, unsigned workers,
                  const std::function<void(std::size_t)>& body);

} // namespace qpkpd
