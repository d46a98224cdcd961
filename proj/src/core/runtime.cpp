#include <cstdlib>
#include <string>

#include "volformer/core/op_counter.hpp"
#include "volformer/core/parallel.hpp"
#include "volformer/core/random.hpp"

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace volformer {

namespace {
thread_local std::uint64_t g_ops = 0;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t op_count() { return g_ops; }
void add_op_count(std::uint64_t ops) { g_ops += ops; }

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t t : tags) h = splitmix64(h ^ splitmix64(t + 0x632BE59BD9B4E019ull));
  return h;
}

void set_thread_count(int threads) {
#if defined(_OPENMP)
  omp_set_num_threads(threads < 1 ? omp_get_num_procs() : threads);
#else
  (void)threads;
#endif
}

int thread_count() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void configure_threads_from_env() {
  if (const char* env = std::getenv("VOLFORMER_THREADS")) {
    try {
      set_thread_count(std::stoi(env));
    } catch (const std::exception&) {
      // unparsable value: keep the runtime default
    }
  }
}

}  // namespace volformer
