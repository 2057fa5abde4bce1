#pragma once

// Execution-policy switch for the embarrassingly parallel loops (dataset
// generation, batch gradient accumulation). Results must not depend on the
// policy: callers accumulate into per-index slots and reduce in fixed order.

#include <cstddef>
#include <functional>

namespace eqnet {

enum class ExecPolicy { Serial, OpenMP };

// Runs fn(0..n-1). Under OpenMP the iterations execute concurrently; fn must
// only touch state owned by its index.
void parallel_for(ExecPolicy policy, std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace eqnet
