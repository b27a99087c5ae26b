#pragma once

#include <cstddef>
#include <functional>

namespace tfx {

/// Process-wide worker cap (the CLI's --threads). 0 means hardware concurrency.
void set_max_threads(unsigned n);
unsigned max_threads();

/// Runs body(i) for i in [0, n). Each index is executed exactly once; callers
/// write results to slot i and reduce in index order afterwards.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace tfx
