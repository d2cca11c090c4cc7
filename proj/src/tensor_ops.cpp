#include "gpq/tensor_ops.hpp"

#include <cmath>
#include <stdexcept>

#include "gpq/kernels.hpp"

namespace gpq::ops {

namespace {

void require_2d(const Tensor& t, const char* op) {
    if (t.shape.size() != 2)
        throw std::invalid_argument(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape));
}

constexpr double kLogFloor = 1e-12;

}  // namespace

float stable_sigmoid(float x) {
    if (x >= 0.0f) {
        float e = std::exp(-x);
        return 1.0f / (1.0f + e);
    }
    float e = std::exp(x);
    return e / (1.0f + e);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.shape[1] != b.shape[0])
        throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(a.shape) + " * " +
                                    shape_str(b.shape));
    Tensor c = Tensor::matrix(a.shape[0], b.shape[1]);
    kernels::matmul(a.data.data(), b.data.data(), c.data.data(), a.shape[0], a.shape[1], b.shape[1]);
    return c;
}

Tensor transpose(const Tensor& x) {
    require_2d(x, "transpose");
    int m = x.shape[0], c = x.shape[1];
    Tensor y = Tensor::matrix(c, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) y.data[size_t(j) * m + i] = x.data[size_t(i) * c + j];
    return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("add: shape mismatch: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    Tensor y = a;
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += b.data[i];
    return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("mul: shape mismatch: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    Tensor y = a;
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] *= b.data[i];
    return y;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_2d(x, "add_bias");
    if (bias.shape.size() != 1 || bias.shape[0] != x.shape[1])
        throw std::invalid_argument("add_bias: bias " + shape_str(bias.shape) + " does not match columns of " +
                                    shape_str(x.shape));
    int m = x.shape[0], c = x.shape[1];
    Tensor y = x;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) y.data[size_t(i) * c + j] += bias.data[j];
    return y;
}

Tensor scale(const Tensor& x, float c) {
    Tensor y = x;
    for (float& v : y.data) v *= c;
    return y;
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (float& v : y.data) v = v > 0.0f ? v : 0.0f;
    return y;
}

Tensor sigmoid(const Tensor& x) {
    Tensor y = x;
    for (float& v : y.data) v = stable_sigmoid(v);
    return y;
}

Tensor softmax_rows(const Tensor& x) {
    require_2d(x, "softmax_rows");
    Tensor y = Tensor::matrix(x.shape[0], x.shape[1]);
    kernels::softmax_rows(x.data.data(), y.data.data(), x.shape[0], x.shape[1]);
    return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    require_2d(x, "layer_norm");
    int m = x.shape[0], c = x.shape[1];
    if (c < 2) throw std::invalid_argument("layer_norm: needs at least 2 columns, got " + shape_str(x.shape));
    if (gain.shape.size() != 1 || gain.shape[0] != c || bias.shape.size() != 1 || bias.shape[0] != c)
        throw std::invalid_argument("layer_norm: gain/bias must be vectors of width " + std::to_string(c));
    Tensor y = Tensor::matrix(m, c);
    kernels::layer_norm_rows(x.data.data(), gain.data.data(), bias.data.data(), y.data.data(), m, c, eps);
    return y;
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
    require_2d(x, "slice_cols");
    int m = x.shape[0], c = x.shape[1];
    if (c0 < 0 || c1 > c || c0 >= c1)
        throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                                    ") for " + shape_str(x.shape));
    int w = c1 - c0;
    Tensor y = Tensor::matrix(m, w);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) y.data[size_t(i) * w + j] = x.data[size_t(i) * c + c0 + j];
    return y;
}

Tensor concat_cols(std::span<const Tensor* const> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    int m = parts[0]->shape[0];
    int total = 0;
    for (const Tensor* p : parts) {
        require_2d(*p, "concat_cols");
        if (p->shape[0] != m) throw std::invalid_argument("concat_cols: row count mismatch");
        total += p->shape[1];
    }
    Tensor y = Tensor::matrix(m, total);
    int off = 0;
    for (const Tensor* p : parts) {
        int w = p->shape[1];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) y.data[size_t(i) * total + off + j] = p->data[size_t(i) * w + j];
        off += w;
    }
    return y;
}

Tensor sinusoid(const Tensor& points, std::span<const float> freqs) {
    require_2d(points, "sinusoid");
    int m = points.shape[0], d = points.shape[1];
    int f = int(freqs.size());
    int w = d * f * 2;
    Tensor y = Tensor::matrix(m, w);
    for (int i = 0; i < m; ++i) {
        for (int dd = 0; dd < d; ++dd) {
            float coord = points.data[size_t(i) * d + dd];
            for (int ff = 0; ff < f; ++ff) {
                float arg = freqs[ff] * coord;
                int col = dd * (2 * f) + 2 * ff;
                y.data[size_t(i) * w + col] = std::sin(arg);
                y.data[size_t(i) * w + col + 1] = std::cos(arg);
            }
        }
    }
    return y;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data) acc += double(v);
    return Tensor::scalar(float(acc));
}

Tensor focal_loss(const Tensor& probs, const Tensor& targets, float alpha, float gamma) {
    if (!probs.same_shape(targets))
        throw std::invalid_argument("focal_loss: targets " + shape_str(targets.shape) + " vs probs " +
                                    shape_str(probs.shape));
    double acc = 0.0;
    for (size_t i = 0; i < probs.data.size(); ++i) {
        double p = double(probs.data[i]);
        if (targets.data[i] > 0.5f) {
            acc += -double(alpha) * std::pow(1.0 - p, double(gamma)) * std::log(std::max(p, kLogFloor));
        } else {
            acc += -double(1.0f - alpha) * std::pow(p, double(gamma)) * std::log(std::max(1.0 - p, kLogFloor));
        }
    }
    return Tensor::scalar(float(acc));
}

Tensor masked_l1(const Tensor& x, const Tensor& target, const Tensor& mask) {
    if (!x.same_shape(target) || !x.same_shape(mask))
        throw std::invalid_argument("masked_l1: shape mismatch with " + shape_str(x.shape));
    double acc = 0.0;
    for (size_t i = 0; i < x.data.size(); ++i)
        acc += double(mask.data[i]) * std::abs(double(x.data[i]) - double(target.data[i]));
    return Tensor::scalar(float(acc));
}

}  // namespace gpq::ops
