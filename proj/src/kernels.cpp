#include "gpq/kernels.hpp"

#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gpq::kernels {

namespace {

thread_local bool g_force_serial = false;

// Work thresholds below which the fork/join cost outweighs the win.
constexpr long long kMatmulParallelMinWork = 1 << 15;
constexpr long long kRowOpParallelMinWork = 1 << 14;

inline bool parallel_enabled(long long work, long long min_work) {
#ifdef _OPENMP
    return !g_force_serial && work >= min_work;
#else
    (void)work;
    (void)min_work;
    return false;
#endif
}

// One output row of a*b against a pre-transposed b (bt is n x k). The k-order
// double accumulation here must match ref::matmul exactly.
inline void matmul_row(const float* a_row, const float* bt, float* c_row, int k, int n) {
    for (int j = 0; j < n; ++j) {
        const float* b_col = bt + size_t(j) * k;
        double acc = 0.0;
        for (int t = 0; t < k; ++t) acc += double(a_row[t]) * double(b_col[t]);
        c_row[j] = float(acc);
    }
}

inline void softmax_row(const float* x, float* y, int n) {
    float m = x[0];
    for (int j = 1; j < n; ++j) m = std::max(m, x[j]);
    std::vector<double> e(n);
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
        e[j] = std::exp(double(x[j]) - double(m));
        sum += e[j];
    }
    for (int j = 0; j < n; ++j) y[j] = float(e[j] / sum);
}

inline void layer_norm_row(const float* x, const float* gain, const float* bias, float* y, int n,
                           float eps) {
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += double(x[j]);
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
        double d = double(x[j]) - mean;
        var += d * d;
    }
    var /= n;
    double inv_std = 1.0 / std::sqrt(var + double(eps));
    for (int j = 0; j < n; ++j) {
        double norm = (double(x[j]) - mean) * inv_std;
        y[j] = float(norm * double(gain[j]) + double(bias[j]));
    }
}

}  // namespace

void matmul(const float* a, const float* b, float* c, int m, int k, int n) {
    // Transposed copy of b gives contiguous dot products for every row.
    std::vector<float> bt(size_t(k) * n);
    for (int t = 0; t < k; ++t)
        for (int j = 0; j < n; ++j) bt[size_t(j) * k + t] = b[size_t(t) * n + j];

    const long long work = 1ll * m * k * n;
    if (parallel_enabled(work, kMatmulParallelMinWork)) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < m; ++i) matmul_row(a + size_t(i) * k, bt.data(), c + size_t(i) * n, k, n);
    } else {
        for (int i = 0; i < m; ++i) matmul_row(a + size_t(i) * k, bt.data(), c + size_t(i) * n, k, n);
    }
}

void softmax_rows(const float* x, float* y, int m, int n) {
    if (parallel_enabled(1ll * m * n, kRowOpParallelMinWork)) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < m; ++i) softmax_row(x + size_t(i) * n, y + size_t(i) * n, n);
    } else {
        for (int i = 0; i < m; ++i) softmax_row(x + size_t(i) * n, y + size_t(i) * n, n);
    }
}

void layer_norm_rows(const float* x, const float* gain, const float* bias, float* y, int m, int n,
                     float eps) {
    if (parallel_enabled(1ll * m * n, kRowOpParallelMinWork)) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < m; ++i) layer_norm_row(x + size_t(i) * n, gain, bias, y + size_t(i) * n, n, eps);
    } else {
        for (int i = 0; i < m; ++i) layer_norm_row(x + size_t(i) * n, gain, bias, y + size_t(i) * n, n, eps);
    }
}

namespace ref {

void matmul(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += double(a[size_t(i) * k + t]) * double(b[size_t(t) * n + j]);
            c[size_t(i) * n + j] = float(acc);
        }
    }
}

void softmax_rows(const float* x, float* y, int m, int n) {
    for (int i = 0; i < m; ++i) {
        const float* xr = x + size_t(i) * n;
        float* yr = y + size_t(i) * n;
        float mx = xr[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        std::vector<double> e(n);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            e[j] = std::exp(double(xr[j]) - double(mx));
            sum += e[j];
        }
        for (int j = 0; j < n; ++j) yr[j] = float(e[j] / sum);
    }
}

void layer_norm_rows(const float* x, const float* gain, const float* bias, float* y, int m, int n,
                     float eps) {
    for (int i = 0; i < m; ++i) {
        const float* xr = x + size_t(i) * n;
        float* yr = y + size_t(i) * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += double(xr[j]);
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            double d = double(xr[j]) - mean;
            var += d * d;
        }
        var /= n;
        double inv_std = 1.0 / std::sqrt(var + double(eps));
        for (int j = 0; j < n; ++j)
            yr[j] = float((double(xr[j]) - mean) * inv_std * double(gain[j]) + double(bias[j]));
    }
}

}  // namespace ref

ScopedSerial::ScopedSerial() : previous_(g_force_serial) { g_force_serial = true; }
ScopedSerial::~ScopedSerial() { g_force_serial = previous_; }

bool force_serial_active() { return g_force_serial; }

}  // namespace gpq::kernels
