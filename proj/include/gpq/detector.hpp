#pragma once

#include <array>
#include <vector>

#include "gpq/forward.hpp"
#include "gpq/model.hpp"
#include "gpq/scene.hpp"

namespace gpq {

struct Prediction {
    Tensor scores;  // [Nq x C], sigmoid scores
    Tensor boxes;   // [Nq x 4], (cx, cy, w, h) in (0,1)
    int layer_index = 0;
};

struct Detection {
    int query_index;  // row in the prediction
    int class_id;
    float score;
    std::array<float, 4> box;
};

// Inference pass; one Prediction per decoder layer.
std::vector<Prediction> forward_values(Model& m, const Scene& scene, const ForwardOptions& opt = {});

struct GraphPredictions {
    std::vector<autograd::NodeId> scores;  // per layer
    std::vector<autograd::NodeId> boxes;
};

GraphPredictions forward_graph(autograd::Graph& g, Model& m, const Scene& scene, const ForwardOptions& opt = {});

std::vector<Prediction> predictions_from_graph(const autograd::Graph& g, const GraphPredictions& gp);

// NMS-free selector: flattens the Nq x C score tensor and returns the k
// highest instances, ties broken by lower query index then lower class id.
std::vector<Detection> select_topk(const Prediction& pred, int k);

}  // namespace gpq
