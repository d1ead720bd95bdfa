#pragma once

#include <cstddef>
#include <vector>

// Accumulate-into matrix kernels. The core computes C += A * B in row-major
// with four rows of A in flight, so each loaded B row feeds four independent
// FMA streams over contiguous C rows. Summation order is fixed, so results
// are deterministic; no reassociation flags are needed for vectorization.
namespace icnp::detail {

// C[n x m] (+)= A[n x k] * B[k x m]; kOverwrite skips the zero-fill by
// storing on the first reduction step.
enum class Acc { kAccumulate, kOverwrite };

template <Acc mode>
inline void core_nn_t(double* C, const double* A, const double* B, std::size_t n, std::size_t k,
                      std::size_t m) {
    if (k == 0) {
        if constexpr (mode == Acc::kOverwrite)
            for (std::size_t i = 0; i < n * m; ++i) C[i] = 0.0;
        return;
    }
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const double* a0 = A + i * k;
        const double* a1 = a0 + k;
        const double* a2 = a1 + k;
        const double* a3 = a2 + k;
        double* c0 = C + i * m;
        double* c1 = c0 + m;
        double* c2 = c1 + m;
        double* c3 = c2 + m;
        if constexpr (mode == Acc::kOverwrite) {
            const double x0 = a0[0], x1 = a1[0], x2 = a2[0], x3 = a3[0];
            for (std::size_t j = 0; j < m; ++j) {
                const double bv = B[j];
                c0[j] = x0 * bv;
                c1[j] = x1 * bv;
                c2[j] = x2 * bv;
                c3[j] = x3 * bv;
            }
        }
        for (std::size_t p = (mode == Acc::kOverwrite ? 1 : 0); p < k; ++p) {
            const double x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
            const double* b = B + p * m;
            for (std::size_t j = 0; j < m; ++j) {
                const double bv = b[j];
                c0[j] += x0 * bv;
                c1[j] += x1 * bv;
                c2[j] += x2 * bv;
                c3[j] += x3 * bv;
            }
        }
    }
    for (; i < n; ++i) {
        const double* a = A + i * k;
        double* c = C + i * m;
        if constexpr (mode == Acc::kOverwrite) {
            const double av = a[0];
            for (std::size_t j = 0; j < m; ++j) c[j] = av * B[j];
        }
        for (std::size_t p = (mode == Acc::kOverwrite ? 1 : 0); p < k; ++p) {
            const double av = a[p];
            const double* b = B + p * m;
            for (std::size_t j = 0; j < m; ++j) c[j] += av * b[j];
        }
    }
}

inline void core_nn(double* C, const double* A, const double* B, std::size_t n, std::size_t k,
                    std::size_t m) {
    core_nn_t<Acc::kAccumulate>(C, A, B, n, k, m);
}

inline std::vector<double>& mm_scratch() {
    thread_local std::vector<double> s;
    return s;
}

inline void transpose_into(std::vector<double>& dst, const double* src, std::size_t rows,
                           std::size_t cols) {
    dst.resize(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// C[n x m] (+)= A[n x k] * B[k x m]
template <Acc mode = Acc::kAccumulate>
inline void mm_nn(double* C, const double* A, const double* B, std::size_t n, std::size_t k,
                  std::size_t m) {
    core_nn_t<mode>(C, A, B, n, k, m);
}

// C[n x m] (+)= A[n x k] * B[m x k]^T
template <Acc mode = Acc::kAccumulate>
inline void mm_nt(double* C, const double* A, const double* B, std::size_t n, std::size_t k,
                  std::size_t m) {
    auto& bt = mm_scratch();
    transpose_into(bt, B, m, k);  // -> [k x m]
    core_nn_t<mode>(C, A, bt.data(), n, k, m);
}

// C[n x m] (+)= A[k x n]^T * B[k x m]
template <Acc mode = Acc::kAccumulate>
inline void mm_tn(double* C, const double* A, const double* B, std::size_t n, std::size_t k,
                  std::size_t m) {
    auto& at = mm_scratch();
    transpose_into(at, A, k, n);  // -> [n x k]
    core_nn_t<mode>(C, at.data(), B, n, k, m);
}

}  // namespace icnp::detail
