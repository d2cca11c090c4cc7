#pragma once

#include <cstddef>

namespace gpq::kernels {

// Row-parallel compute kernels. Each output row is produced by exactly one
// thread with a fixed inner accumulation order, so the parallel kernels are
// bit-identical to the serial reference for any thread count. Reductions
// accumulate in double.
//
// The serial reference implementations under kernels::ref are kept for
// testing and for the kernel benchmark; they must stay independent of the
// parallel path.

// c[m x n] = a[m x k] * b[k x n]
void matmul(const float* a, const float* b, float* c, int m, int k, int n);

// Row-wise softmax with per-row max subtraction, in place allowed (x != y ok).
void softmax_rows(const float* x, float* y, int m, int n);

// Per-row normalization to mean 0 / var 1 (epsilon inside the sqrt), then
// gain/bias. gain and bias have n entries.
void layer_norm_rows(const float* x, const float* gain, const float* bias,
                     float* y, int m, int n, float eps);

namespace ref {
void matmul(const float* a, const float* b, float* c, int m, int k, int n);
void softmax_rows(const float* x, float* y, int m, int n);
void layer_norm_rows(const float* x, const float* gain, const float* bias,
                     float* y, int m, int n, float eps);
}  // namespace ref

// Forces the parallel entry points onto the serial path for the lifetime of
// the scope. Latency measurement uses this to pin the measured region to a
// single thread.
class ScopedSerial {
public:
    ScopedSerial();
    ~ScopedSerial();
    ScopedSerial(const ScopedSerial&) = delete;
    ScopedSerial& operator=(const ScopedSerial&) = delete;

private:
    bool previous_;
};

bool force_serial_active();

}  // namespace gpq::kernels
