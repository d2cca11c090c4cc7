// Compares the OpenMP kernels against the serial reference and reports the
// speedup. The two paths must stay bit-identical; any mismatch aborts.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "gpq/kernels.hpp"
#include "gpq/tensor.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
    auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

bool bit_equal(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP: %d threads\n", omp_get_max_threads());
#else
    std::printf("OpenMP: unavailable, both paths run serial\n");
#endif
    std::printf("%-22s %5s %12s %12s %9s\n", "kernel", "size", "serial ms", "parallel ms", "speedup");

    gpq::Rng rng(42, "kernel-bench");
    for (int n : {128, 256, 512}) {
        gpq::Tensor a = gpq::Tensor::matrix(n, n);
        gpq::Tensor b = gpq::Tensor::matrix(n, n);
        rng.fill_uniform(a, -1.0f, 1.0f);
        rng.fill_uniform(b, -1.0f, 1.0f);
        std::vector<float> c_ref(size_t(n) * n), c_par(size_t(n) * n);

        int reps = n <= 256 ? 10 : 3;
        double t_ref = time_ms(
            [&] { gpq::kernels::ref::matmul(a.data.data(), b.data.data(), c_ref.data(), n, n, n); }, reps);
        double t_par =
            time_ms([&] { gpq::kernels::matmul(a.data.data(), b.data.data(), c_par.data(), n, n, n); }, reps);
        if (!bit_equal(c_ref, c_par)) {
            std::fprintf(stderr, "matmul: parallel result differs from serial reference\n");
            return 1;
        }
        std::printf("%-22s %5d %12.3f %12.3f %8.2fx\n", "matmul", n, t_ref, t_par, t_ref / t_par);
    }

    for (int n : {512, 1024}) {
        gpq::Tensor x = gpq::Tensor::matrix(n, n);
        rng.fill_uniform(x, -4.0f, 4.0f);
        std::vector<float> y_ref(size_t(n) * n), y_par(size_t(n) * n);
        double t_ref = time_ms([&] { gpq::kernels::ref::softmax_rows(x.data.data(), y_ref.data(), n, n); }, 10);
        double t_par = time_ms([&] { gpq::kernels::softmax_rows(x.data.data(), y_par.data(), n, n); }, 10);
        if (!bit_equal(y_ref, y_par)) {
            std::fprintf(stderr, "softmax_rows: parallel result differs from serial reference\n");
            return 1;
        }
        std::printf("%-22s %5d %12.3f %12.3f %8.2fx\n", "softmax_rows", n, t_ref, t_par, t_ref / t_par);

        gpq::Tensor gain({n}, 1.0f), bias({n}, 0.0f);
        double ln_ref = time_ms(
            [&] {
                gpq::kernels::ref::layer_norm_rows(x.data.data(), gain.data.data(), bias.data.data(), y_ref.data(), n,
                                                   n, 1e-5f);
            },
            10);
        double ln_par = time_ms(
            [&] {
                gpq::kernels::layer_norm_rows(x.data.data(), gain.data.data(), bias.data.data(), y_par.data(), n, n,
                                              1e-5f);
            },
            10);
        if (!bit_equal(y_ref, y_par)) {
            std::fprintf(stderr, "layer_norm_rows: parallel result differs from serial reference\n");
            return 1;
        }
        std::printf("%-22s %5d %12.3f %12.3f %8.2fx\n", "layer_norm_rows", n, ln_ref, ln_par, ln_ref / ln_par);
    }
    return 0;
}
