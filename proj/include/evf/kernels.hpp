#pragma once

#include <cmath>
#include <cstdint>

// Shared scalar kernels. Both the recording tape and the tape-free inference
// path call these, so the two paths produce bit-identical values when they
// execute the same op sequence. Reductions use a fixed 8-way accumulator
// split: deterministic summation order, and independent chains the compiler
// can keep in flight without -ffast-math.
namespace evf::kernels {

template <typename S>
inline S dot(const S* a, const S* b, int n) {
    S c0 = 0, c1 = 0, c2 = 0, c3 = 0, c4 = 0, c5 = 0, c6 = 0, c7 = 0;
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        c0 += a[i] * b[i];
        c1 += a[i + 1] * b[i + 1];
        c2 += a[i + 2] * b[i + 2];
        c3 += a[i + 3] * b[i + 3];
        c4 += a[i + 4] * b[i + 4];
        c5 += a[i + 5] * b[i + 5];
        c6 += a[i + 6] * b[i + 6];
        c7 += a[i + 7] * b[i + 7];
    }
    S acc = ((c0 + c1) + (c2 + c3)) + ((c4 + c5) + (c6 + c7));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

// C[m,n] = A[m,k] * B[k,n], row-major; n == 1 takes the dot path.
template <typename S>
inline void matmul(const S* a, const S* b, S* c, int m, int k, int n) {
    if (n == 1) {
        for (int i = 0; i < m; ++i) c[i] = dot(a + static_cast<int64_t>(i) * k, b, k);
        return;
    }
    for (int i = 0; i < m; ++i) {
        S* crow = c + static_cast<int64_t>(i) * n;
        const S* arow = a + static_cast<int64_t>(i) * k;
        for (int j = 0; j < n; ++j) crow[j] = 0;
        for (int kk = 0; kk < k; ++kk) {
            const S av = arow[kk];
            const S* brow = b + static_cast<int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// dst[k] += s * src[k]
template <typename S>
inline void axpy(S s, const S* src, S* dst, int n) {
    for (int i = 0; i < n; ++i) dst[i] += s * src[i];
}

template <typename S>
inline S sigmoid(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

template <typename S>
inline S softplus(S x) {
    // log1p(exp(x)) with the standard overflow-safe split
    return x > S(20) ? x : std::log1p(std::exp(x));
}

}  // namespace evf::kernels
