#pragma once

#include <string>
#include <vector>

#include "gpq/autograd.hpp"

namespace gpq {

struct AdamWConfig {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 1e-2f;
};

// AdamW with decoupled weight decay. Decay applies to weight matrices only;
// vectors (biases, norm parameters) and the reference points are exempt.
class AdamW {
public:
    AdamW(std::vector<std::pair<std::string, Param*>> params, AdamWConfig cfg);

    void step(float lr);

    // Drops per-row moment state when rows of a parameter are deleted.
    // `rows` index the parameter as it was before deletion.
    void remove_rows(const std::string& name, const std::vector<int>& rows, int row_width);

    int64_t steps_taken() const { return t_; }

private:
    struct Slot {
        std::string name;
        Param* param;
        std::vector<float> m, v;
        bool decay;
    };
    std::vector<Slot> slots_;
    AdamWConfig cfg_;
    int64_t t_ = 0;
};

}  // namespace gpq
