#include "gpq/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace gpq {

namespace {

size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension in " + shape_str(shape));
        n *= size_t(d);
    }
    return n;
}

uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

Tensor::Tensor(std::vector<int> s, float fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match data length " +
                                    std::to_string(data.size()));
}

bool Tensor::all_finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

Rng::Rng(uint64_t seed) : state_(seed ^ 0x6a09e667f3bcc909ull) {
    // burn-in decorrelates small seeds
    for (int i = 0; i < 4; ++i) splitmix64(state_);
}

Rng::Rng(uint64_t seed, const std::string& stream) : Rng(seed ^ fnv1a64(stream)) {}

uint64_t Rng::next() { return splitmix64(state_); }

float Rng::uniform(float lo, float hi) {
    double u = double(next() >> 11) * 0x1.0p-53;
    return lo + float(u * (double(hi) - double(lo)));
}

int Rng::uniform_int(int lo, int hi) {
    uint64_t span = uint64_t(hi - lo) + 1;
    return lo + int(next() % span);
}

void Rng::fill_uniform(Tensor& t, float lo, float hi) {
    for (float& v : t.data) v = uniform(lo, hi);
}

float xavier_bound(int fan_in, int fan_out) {
    return std::sqrt(6.0f / float(fan_in + fan_out));
}

}  // namespace gpq
