#pragma once

#include <vector>

#include "gpq/autograd.hpp"
#include "gpq/detector.hpp"
#include "gpq/scene.hpp"

namespace gpq {

struct CostMatrix {
    Tensor values;  // [Nq x M]

    int num_queries() const { return values.shape[0]; }
    int num_targets() const { return values.shape[1]; }
};

struct Assignment {
    std::vector<std::pair<int, int>> pairs;  // (query, gt), sorted by query
    double total_cost = 0.0;
};

struct LossConfig {
    float w_cls = 2.0f;
    float w_box = 0.25f;
    float focal_alpha = 0.25f;
    float focal_gamma = 2.0f;
};

// cost(q, g) = w_cls * (-score[q, class(g)]) + w_box * L1(box[q], box(g))
CostMatrix build_cost(const Prediction& pred, const Scene& scene, float w_cls, float w_box);

// Minimum-cost assignment of every ground-truth object to a distinct query.
// Rectangular instances are padded to square with a large finite constant and
// the padded pairs stripped. Among equal-cost optima the lexicographically
// smallest pair list is returned (query-sorted; guaranteed for M <= 12).
Assignment hungarian(const CostMatrix& cost);

namespace detail {
// Both solver paths, exposed so tests can cross-check them; hungarian()
// dispatches between them on the target count.
Assignment hungarian_padded_km(const CostMatrix& cost);
Assignment hungarian_subset_dp(const CostMatrix& cost);
}  // namespace detail

// Deep-supervised set loss: per layer, focal loss on scores (matched queries
// target their class, the rest all-zeros) plus L1 on matched boxes, both
// weighted and normalized by the number of objects; mean over layers.
autograd::NodeId set_loss_graph(autograd::Graph& g, const GraphPredictions& preds, const Scene& scene,
                                const LossConfig& cfg, std::vector<Assignment>* per_layer = nullptr,
                                std::vector<CostMatrix>* per_layer_costs = nullptr);

// Value-only convenience wrapper over the same graph construction.
float set_loss_value(const std::vector<Prediction>& preds, const Scene& scene, const LossConfig& cfg);

}  // namespace gpq
