#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace layermon {

/// Number of worker threads used by parallel_for. Defaults to the hardware
/// count; settable once at startup (e.g. from the CLI).
std::size_t worker_threads();
void set_worker_threads(std::size_t n);

/// Static-partition parallel loop over [0, n). Work item i always runs exactly
/// once; partitioning is by contiguous blocks. Results must not depend on
/// which thread runs which block: every reduction in this codebase is owned by
/// a single work item, so outputs are identical for any thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace layermon
