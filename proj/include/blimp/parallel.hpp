// Execution policy for the data-parallel kernels. Every kernel keeps a serial
// path; the parallel path writes per-item slots that are reduced in index
// order, so both paths give bit-identical results.
#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace blimp {

enum class Exec { serial, parallel };

/// Caps the worker count used by Exec::parallel (n <= 0 restores the default).
void set_thread_count(int n);
int thread_count();

/// Runs f(i) for i in [0, n). In parallel mode an exception thrown by any item
/// is rethrown after the loop; the one from the lowest index wins.
template <class F> void parallel_for(Exec exec, std::size_t n, F&& f) {
#ifdef _OPENMP
    if (exec == Exec::parallel && n > 1) {
        const long long count = static_cast<long long>(n);
        std::exception_ptr first;
        long long first_index = count;
        std::mutex guard;
#pragma omp parallel for schedule(static) num_threads(thread_count())
        for (long long i = 0; i < count; ++i) {
            try {
                f(static_cast<std::size_t>(i));
            } catch (...) {
                std::lock_guard<std::mutex> lock(guard);
                if (i < first_index) {
                    first_index = i;
                    first = std::current_exception();
                }
            }
        }
        if (first) std::rethrow_exception(first);
        return;
    }
#endif
    for (std::size_t i = 0; i < n; ++i) f(i);
}

}  // namespace blimp
