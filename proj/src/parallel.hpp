#pragma once

// Exceptions cannot leave an OpenMP region, so each iteration's exception is
// captured and one of them is rethrown after the loop.

#include <exception>

namespace mast::detail {

template <typename Body>
void parallel_for(long n, Body&& body) {
  std::exception_ptr error;
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
#pragma omp critical(mast_parallel_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace mast::detail
