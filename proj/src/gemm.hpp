#pragma once

#include <cstdint>

namespace rdsal::detail {

// Small accumulating GEMM kernels. Single-threaded on purpose: results must
// be bit-reproducible and the matrices here are modest. The loop orders are
// chosen so the inner loop is a contiguous stream the compiler vectorizes.

// C (MxN) += A (MxK) * B (KxN)
template <typename T>
void gemm_nn(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B, T* C) {
    for (std::int64_t i = 0; i < M; ++i) {
        const T* a = A + i * K;
        T* c = C + i * N;
        for (std::int64_t k = 0; k < K; ++k) {
            T aik = a[k];
            const T* b = B + k * N;
            for (std::int64_t j = 0; j < N; ++j) c[j] += aik * b[j];
        }
    }
}

// C (MxN) += A (MxK) * B^T, with B stored (NxK)
template <typename T>
void gemm_abt(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B, T* C) {
    for (std::int64_t i = 0; i < M; ++i) {
        const T* a = A + i * K;
        T* c = C + i * N;
        for (std::int64_t j = 0; j < N; ++j) {
            const T* b = B + j * K;
            T acc = T(0);
            for (std::int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
            c[j] += acc;
        }
    }
}

// C (MxN) += A^T * B, with A stored (KxM), B stored (KxN)
template <typename T>
void gemm_atb(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B, T* C) {
    for (std::int64_t k = 0; k < K; ++k) {
        const T* a = A + k * M;
        const T* b = B + k * N;
        for (std::int64_t i = 0; i < M; ++i) {
            T aik = a[i];
            T* c = C + i * N;
            for (std::int64_t j = 0; j < N; ++j) c[j] += aik * b[j];
        }
    }
}

}  // namespace rdsal::detail
