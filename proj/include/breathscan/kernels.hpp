#pragma once

#include <cstddef>

namespace breathscan::kernels {

// Dense kernels behind the DSP and network layers. Every parallel kernel has
// a serial reference twin in kernels::ref with the same element-wise
// summation order, so omp and serial results are bit-identical; tests compare
// them and the bench target times them.
//
// Thread count follows the OpenMP runtime (the CLI maps --jobs onto it).

void set_num_threads(int n);

namespace ref {

// C[m x n] = A[m x k] * B[k x n] (+ C when accumulate)
template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            T acc = accumulate ? c[std::size_t(i) * n + j] : T(0);
            const T* arow = a + std::size_t(i) * k;
            for (int p = 0; p < k; ++p) acc += arow[p] * b[std::size_t(p) * n + j];
            c[std::size_t(i) * n + j] = acc;
        }
    }
}

// C[m x n] = A^T[k x m] * B[k x n]  (A stored k x m)
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            T acc = accumulate ? c[std::size_t(i) * n + j] : T(0);
            for (int p = 0; p < k; ++p)
                acc += a[std::size_t(p) * m + i] * b[std::size_t(p) * n + j];
            c[std::size_t(i) * n + j] = acc;
        }
    }
}

// C[m x n] = A[m x k] * B^T[n x k]  (B stored n x k)
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            T acc = accumulate ? c[std::size_t(i) * n + j] : T(0);
            const T* arow = a + std::size_t(i) * k;
            const T* brow = b + std::size_t(j) * k;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[std::size_t(i) * n + j] = acc;
        }
    }
}

// Power spectra of hopped frames: one row of n_bins = n_fft/2 + 1 values per
// frame. cos_table/sin_table are [n_bins x n_fft]; window is n_fft long.
// Frame f reads samples [f*hop, f*hop + n_fft), zero beyond num_samples.
void dft_power_frames(const double* samples, long num_samples, int n_fft, int hop, int n_frames,
                      const double* window, const double* cos_table, const double* sin_table,
                      double* power_out);

}  // namespace ref

template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false);
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false);
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate = false);

void dft_power_frames(const double* samples, long num_samples, int n_fft, int hop, int n_frames,
                      const double* window, const double* cos_table, const double* sin_table,
                      double* power_out);

extern template void matmul<float>(const float*, const float*, float*, int, int, int, bool);
extern template void matmul<double>(const double*, const double*, double*, int, int, int, bool);
extern template void matmul_tn<float>(const float*, const float*, float*, int, int, int, bool);
extern template void matmul_tn<double>(const double*, const double*, double*, int, int, int, bool);
extern template void matmul_nt<float>(const float*, const float*, float*, int, int, int, bool);
extern template void matmul_nt<double>(const double*, const double*, double*, int, int, int, bool);

}  // namespace breathscan::kernels
