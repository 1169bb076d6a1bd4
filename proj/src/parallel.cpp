#include "oat/parallel.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace oat {

namespace {
int g_threads = 0;

int default_threads() {
  if (const char *env = std::getenv("OAT_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0)
        return n;
    } catch (...) {
    }
  }
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}
} // namespace

void set_num_threads(int n) { g_threads = n > 0 ? n : default_threads(); }

int num_threads() {
  if (g_threads <= 0)
    g_threads = default_threads();
  return g_threads;
}

} // namespace oat
