#pragma once

#include <cstddef>

namespace oat {

/// Thread count used by the compute kernels. 0 selects the OAT_THREADS
/// environment variable, falling back to the OpenMP default.
void set_num_threads(int n);
int num_threads();

/// Calls fn(i) for i in [0, n). Iterations must write disjoint outputs; the
/// result is then independent of the thread count.
template <class Fn> void parallel_for(std::ptrdiff_t n, Fn &&fn) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(num_threads()) if (n > 64)
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i)
    fn(i);
}

} // namespace oat
