#include "eqnet/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace eqnet {

void parallel_for(ExecPolicy policy, std::size_t n, const std::function<void(std::size_t)>& fn) {
#ifdef _OPENMP
  if (policy == ExecPolicy::OpenMP) {
#pragma omp parallel for schedule(dynamic, 1)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      fn(static_cast<std::size_t>(i));
    }
    return;
  }
#else
  (void)policy;
#endif
  for (std::size_t i = 0; i < n; ++i) fn(i);
}

}  // namespace eqnet
