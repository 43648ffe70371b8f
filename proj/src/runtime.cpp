#include "swe/nn/ops.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace swe {

// BLAS runs single-threaded inside deterministically partitioned OpenMP
// loops; nested BLAS threading would make reductions timing-dependent.
struct RuntimeInit {
  RuntimeInit() { nn::set_blas_single_threaded(); }
};
static RuntimeInit runtime_init;

}  // namespace swe
