#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gpq {

// Dense row-major float32 array. Shapes are 1-D (vectors/biases) or 2-D
// (everything else); a scalar is shape {1}.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<int> s, float fill = 0.0f);
    Tensor(std::vector<int> s, std::vector<float> d);

    static Tensor matrix(int rows, int cols, float fill = 0.0f) {
        return Tensor({rows, cols}, fill);
    }
    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    size_t numel() const { return data.size(); }
    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() == 2 ? shape[1] : 1; }

    float& at(int r, int c) { return data[size_t(r) * cols() + c]; }
    float at(int r, int c) const { return data[size_t(r) * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

std::string shape_str(const std::vector<int>& shape);

// Deterministic RNG. Each consumer derives its own stream from the master
// seed and a stream label so runs are reproducible from a single seed.
class Rng {
public:
    explicit Rng(uint64_t seed);
    Rng(uint64_t seed, const std::string& stream);

    uint64_t next();
    float uniform(float lo, float hi);
    int uniform_int(int lo, int hi);  // inclusive range
    void fill_uniform(Tensor& t, float lo, float hi);

private:
    uint64_t state_;
};

// Xavier bound for a [fan_in x fan_out] linear layer.
float xavier_bound(int fan_in, int fan_out);

}  // namespace gpq
