#include "gpq/detector.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace gpq {

std::vector<Prediction> forward_values(Model& m, const Scene& scene, const ForwardOptions& opt) {
    ValueBackend b;
    auto out = model_fwd(b, m, scene, opt);
    std::vector<Prediction> preds;
    preds.reserve(out.scores.size());
    for (size_t l = 0; l < out.scores.size(); ++l)
        preds.push_back({std::move(out.scores[l]), std::move(out.boxes[l]), int(l)});
    return preds;
}

GraphPredictions forward_graph(autograd::Graph& g, Model& m, const Scene& scene, const ForwardOptions& opt) {
    GraphBackend b{g};
    auto out = model_fwd(b, m, scene, opt);
    return {std::move(out.scores), std::move(out.boxes)};
}

std::vector<Prediction> predictions_from_graph(const autograd::Graph& g, const GraphPredictions& gp) {
    std::vector<Prediction> preds;
    preds.reserve(gp.scores.size());
    for (size_t l = 0; l < gp.scores.size(); ++l)
        preds.push_back({g.value(gp.scores[l]), g.value(gp.boxes[l]), int(l)});
    return preds;
}

std::vector<Detection> select_topk(const Prediction& pred, int k) {
    const int nq = pred.scores.shape[0];
    const int c = pred.scores.shape[1];
    const int total = nq * c;
    if (k < 1 || k > total)
        throw std::invalid_argument("select_topk: k must be in [1, " + std::to_string(total) + "], got " +
                                    std::to_string(k));
    std::vector<int> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    auto better = [&](int a, int b) {
        float sa = pred.scores.data[a], sb = pred.scores.data[b];
        if (sa != sb) return sa > sb;
        return a < b;  // flattened order is (query, class), the stated tie-break
    };
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), better);
    std::vector<Detection> out;
    out.reserve(k);
    for (int i = 0; i < k; ++i) {
        int q = idx[i] / c;
        int cls = idx[i] % c;
        Detection d;
        d.query_index = q;
        d.class_id = cls;
        d.score = pred.scores.data[idx[i]];
        d.box = {pred.boxes.at(q, 0), pred.boxes.at(q, 1), pred.boxes.at(q, 2), pred.boxes.at(q, 3)};
        out.push_back(d);
    }
    return out;
}

}  // namespace gpq
