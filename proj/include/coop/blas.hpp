#pragma once

// Row-major dgemm via OpenBLAS, loaded with dlopen at first use instead of at
// link time. OpenBLAS picks its kernels inside a load-time constructor, and
// virtualized CPUs often defeat that auto-detection and land on generic
// kernels ~5x slower; deferring the load lets us pin OPENBLAS_CORETYPE first
// when the CPU reports AVX-512 and the caller didn't choose. One BLAS thread,
// always: jobs parallelize above BLAS, and a fixed thread count keeps results
// bit-reproducible.

#include <dlfcn.h>

#include <cstdlib>
#include <malloc.h>
#include <stdexcept>

namespace coop {

namespace blas_detail {

// cblas_dgemm with CBLAS enums passed as plain ints (no cblas.h at compile time)
using dgemm_fn = void (*)(int order, int trans_a, int trans_b, int m, int n, int k,
                          double alpha, const double* a, int lda, const double* b,
                          int ldb, double beta, double* c, int ldc);

struct lib {
    dgemm_fn dgemm = nullptr;

    lib() {
#if defined(__x86_64__)
        if (__builtin_cpu_supports("avx512f") && !std::getenv("OPENBLAS_CORETYPE"))
            setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
#endif
        void* h = dlopen("libopenblas.so.0", RTLD_NOW | RTLD_GLOBAL);
        if (!h) h = dlopen("libopenblas.so", RTLD_NOW | RTLD_GLOBAL);
        if (!h) throw std::runtime_error("blas: cannot load libopenblas");
        if (auto set = reinterpret_cast<void (*)(int)>(dlsym(h, "openblas_set_num_threads")))
            set(1);
        dgemm = reinterpret_cast<dgemm_fn>(dlsym(h, "cblas_dgemm"));
        if (!dgemm) throw std::runtime_error("blas: libopenblas lacks cblas_dgemm");
        // keep large activation buffers on the heap so freed blocks are reused
        // instead of being returned to the OS and re-faulted every step
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
    }
};

inline lib& get() {
    static lib l;
    return l;
}

} // namespace blas_detail

inline void blas_init() { blas_detail::get(); }

// C = alpha * op(A) op(B) + beta * C, row-major.
// op(A) is m x k, op(B) is k x n; lda/ldb/ldc are row strides of the stored
// (untransposed) matrices, so strided sub-matrix views work without copies.
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb, double beta,
                 double* c, int ldc) {
    blas_detail::get().dgemm(101, trans_a ? 112 : 111, trans_b ? 112 : 111, m, n, k,
                             alpha, a, lda, b, ldb, beta, c, ldc);
}

} // namespace coop
