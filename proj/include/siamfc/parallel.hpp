#pragma once

#include <functional>

namespace siamfc {

/// Worker count used by parallel_for. 1 (the default) runs everything inline.
void set_num_threads(int threads);
int num_threads();

/// Calls fn(i) for every i in [begin, end), split into contiguous chunks over
/// the configured worker count. Each index is visited exactly once, so
/// callers that write disjoint outputs per index stay deterministic for any
/// thread count.
void parallel_for(int begin, int end, const std::function<void(int)>& fn);

}  // namespace siamfc
