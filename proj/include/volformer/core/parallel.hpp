#pragma once

#include <cstddef>

namespace volformer {

/// Caps kernel parallelism. Values < 1 reset to the runtime default.
void set_thread_count(int threads);
int thread_count();
/// Reads VOLFORMER_THREADS, if set.
void configure_threads_from_env();

/// Runs f(i) for i in [0, n). Each index is handled by exactly one thread, so
/// kernels that write disjoint outputs per index stay bit-identical regardless
/// of the thread count.
template <class F>
void parallel_for(std::ptrdiff_t n, F&& f) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) if (n > 1)
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i) f(i);
}

}  // namespace volformer
