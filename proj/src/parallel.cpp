#include "iia/parallel.hpp"

#include <cstdlib>
#include <string>

#include <omp.h>

namespace iia {

int configure_threads_from_env() {
  if (const char* v = std::getenv("IIA_NUM_THREADS"); v != nullptr && *v != '\0') {
    try {
      const int n = std::stoi(v);
      if (n > 0) omp_set_num_threads(n);
    } catch (const std::exception&) {
      // unparsable values leave the OpenMP default in place
    }
  }
  return omp_get_max_threads();
}

}  // namespace iia
