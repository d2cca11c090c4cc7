#include "gpq/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gpq {

AdamW::AdamW(std::vector<std::pair<std::string, Param*>> params, AdamWConfig cfg) : cfg_(cfg) {
    slots_.reserve(params.size());
    for (auto& [name, p] : params) {
        Slot s;
        s.name = name;
        s.param = p;
        s.m.assign(p->value.numel(), 0.0f);
        s.v.assign(p->value.numel(), 0.0f);
        s.decay = p->value.shape.size() == 2 && name != "bank.ref_points";
        slots_.push_back(std::move(s));
    }
}

void AdamW::step(float lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(double(cfg_.beta1), double(t_));
    const double bc2 = 1.0 - std::pow(double(cfg_.beta2), double(t_));
    for (auto& s : slots_) {
        auto& value = s.param->value.data;
        auto& grad = s.param->grad;
        if (grad.size() != value.size() || s.m.size() != value.size())
            throw std::logic_error("optimizer: stale state for " + s.name);
        for (size_t i = 0; i < value.size(); ++i) {
            float g = grad[i];
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0f - cfg_.beta1) * g;
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0f - cfg_.beta2) * g * g;
            double mhat = double(s.m[i]) / bc1;
            double vhat = double(s.v[i]) / bc2;
            double update = mhat / (std::sqrt(vhat) + double(cfg_.eps));
            if (s.decay) update += double(cfg_.weight_decay) * double(value[i]);
            value[i] = float(double(value[i]) - double(lr) * update);
        }
    }
}

void AdamW::remove_rows(const std::string& name, const std::vector<int>& rows, int row_width) {
    for (auto& s : slots_) {
        if (s.name != name) continue;
        std::vector<int> sorted = rows;
        std::sort(sorted.begin(), sorted.end());
        for (auto it = sorted.rbegin(); it != sorted.rend(); ++it) {
            size_t begin = size_t(*it) * row_width;
            if (begin + row_width > s.m.size()) throw std::invalid_argument("optimizer: row out of range for " + name);
            s.m.erase(s.m.begin() + begin, s.m.begin() + begin + row_width);
            s.v.erase(s.v.begin() + begin, s.v.begin() + begin + row_width);
        }
        return;
    }
    throw std::invalid_argument("optimizer: unknown parameter " + name);
}

}  // namespace gpq
