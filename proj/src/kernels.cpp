#include "breathscan/kernels.hpp"

#include <omp.h>

#include <vector>

namespace breathscan::kernels {

void set_num_threads(int n) {
    if (n > 0) omp_set_num_threads(n);
}

namespace ref {

void dft_power_frames(const double* samples, long num_samples, int n_fft, int hop, int n_frames,
                      const double* window, const double* cos_table, const double* sin_table,
                      double* power_out) {
    const int n_bins = n_fft / 2 + 1;
    std::vector<double> frame(n_fft);
    for (int f = 0; f < n_frames; ++f) {
        const long start = static_cast<long>(f) * hop;
        for (int i = 0; i < n_fft; ++i) {
            const long idx = start + i;
            frame[i] = (idx < num_samples) ? samples[idx] * window[i] : 0.0;
        }
        double* out = power_out + std::size_t(f) * n_bins;
        for (int k = 0; k < n_bins; ++k) {
            const double* ct = cos_table + std::size_t(k) * n_fft;
            const double* st = sin_table + std::size_t(k) * n_fft;
            double re = 0.0, im = 0.0;
            for (int i = 0; i < n_fft; ++i) {
                re += frame[i] * ct[i];
                im += frame[i] * st[i];
            }
            out[k] = re * re + im * im;
        }
    }
}

}  // namespace ref

template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static) if (std::size_t(m) * n * k > 16384)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            T acc = accumulate ? c[std::size_t(i) * n + j] : T(0);
            const T* arow = a + std::size_t(i) * k;
            for (int p = 0; p < k; ++p) acc += arow[p] * b[std::size_t(p) * n + j];
            c[std::size_t(i) * n + j] = acc;
        }
    }
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static) if (std::size_t(m) * n * k > 16384)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            T acc = accumulate ? c[std::size_t(i) * n + j] : T(0);
            for (int p = 0; p < k; ++p)
                acc += a[std::size_t(p) * m + i] * b[std::size_t(p) * n + j];
            c[std::size_t(i) * n + j] = acc;
        }
    }
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
#pragma omp parallel for schedule(static) if (std::size_t(m) * n * k > 16384)
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

void dft_power_frames(const double* samples, long num_samples, int n_fft, int hop, int n_frames,
                      const double* window, const double* cos_table, const double* sin_table,
                      double* power_out) {
    const int n_bins = n_fft / 2 + 1;
#pragma omp parallel
    {
        std::vector<double> frame(n_fft);
#pragma omp for schedule(static)
        for (int f = 0; f < n_frames; ++f) {
            const long start = static_cast<long>(f) * hop;
            for (int i = 0; i < n_fft; ++i) {
                const long idx = start + i;
                frame[i] = (idx < num_samples) ? samples[idx] * window[i] : 0.0;
            }
            double* out = power_out + std::size_t(f) * n_bins;
            for (int k = 0; k < n_bins; ++k) {
                const double* ct = cos_table + std::size_t(k) * n_fft;
                const double* st = sin_table + std::size_t(k) * n_fft;
                double re = 0.0, im = 0.0;
                for (int i = 0; i < n_fft; ++i) {
                    re += frame[i] * ct[i];
                    im += frame[i] * st[i];
                }
                out[k] = re * re + im * im;
            }
        }
    }
}

template void matmul<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul<double>(const double*, const double*, double*, int, int, int, bool);
template void matmul_tn<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul_tn<double>(const double*, const double*, double*, int, int, int, bool);
template void matmul_nt<float>(const float*, const float*, float*, int, int, int, bool);
template void matmul_nt<double>(const double*, const double*, double*, int, int, int, bool);

}  // namespace breathscan::kernels
