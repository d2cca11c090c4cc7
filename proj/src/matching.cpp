#include "gpq/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gpq {

namespace {

constexpr double kPadCost = 1e6;
constexpr int kSubsetDpMaxTargets = 12;

// Canonical total: original cost entries summed over ground truths in
// ascending order, in double. Both solver paths and the test oracles use
// this order so equal assignments produce bit-equal totals.
double canonical_total(const CostMatrix& cost, const std::vector<std::pair<int, int>>& pairs) {
    std::vector<int> q_of(cost.num_targets(), -1);
    for (auto [q, g] : pairs) q_of[g] = q;
    double total = 0.0;
    for (int g = 0; g < cost.num_targets(); ++g) total += double(cost.values.at(q_of[g], g));
    return total;
}

Assignment finish(const CostMatrix& cost, std::vector<std::pair<int, int>> pairs) {
    std::sort(pairs.begin(), pairs.end());
    Assignment a;
    a.total_cost = canonical_total(cost, pairs);
    a.pairs = std::move(pairs);
    return a;
}

}  // namespace

namespace detail {

// Classic O(n^3) potentials algorithm on the square matrix obtained by
// padding the missing columns with kPadCost.
Assignment hungarian_padded_km(const CostMatrix& cost) {
    const int nq = cost.num_queries();
    const int m = cost.num_targets();
    const int n = nq;  // square side
    const double inf = std::numeric_limits<double>::infinity();

    auto at = [&](int row, int col) -> double {
        return col < m ? double(cost.values.at(row, col)) : kPadCost;
    };

    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            int i0 = p[j0], j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }

    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(m);
    for (int j = 1; j <= m; ++j) pairs.emplace_back(p[j] - 1, j - 1);
    return finish(cost, std::move(pairs));
}

// Exact solver over ground-truth subsets; besides the optimum it extracts the
// lexicographically smallest optimal pair list (sorted by query).
Assignment hungarian_subset_dp(const CostMatrix& cost) {
    const int nq = cost.num_queries();
    const int m = cost.num_targets();
    const int full = (1 << m) - 1;
    const double inf = std::numeric_limits<double>::infinity();

    // dp[q][mask]: min cost covering `mask` with queries q..nq-1.
    std::vector<std::vector<double>> dp(nq + 1, std::vector<double>(full + 1, inf));
    dp[nq][0] = 0.0;
    for (int q = nq - 1; q >= 0; --q) {
        for (int mask = 0; mask <= full; ++mask) {
            double best = dp[q + 1][mask];
            for (int g = 0; g < m; ++g) {
                if (!(mask & (1 << g))) continue;
                double cand = double(cost.values.at(q, g)) + dp[q + 1][mask ^ (1 << g)];
                if (cand < best) best = cand;
            }
            dp[q][mask] = best;
        }
    }

    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(m);
    int mask = full;
    for (int q = 0; q < nq && mask != 0; ++q) {
        double here = dp[q][mask];
        int use_g = -1;
        for (int g = 0; g < m; ++g) {
            if (!(mask & (1 << g))) continue;
            if (double(cost.values.at(q, g)) + dp[q + 1][mask ^ (1 << g)] == here) {
                use_g = g;
                break;
            }
        }
        if (use_g >= 0) {
            pairs.emplace_back(q, use_g);
            mask ^= 1 << use_g;
        }
    }
    return finish(cost, std::move(pairs));
}

}  // namespace detail

CostMatrix build_cost(const Prediction& pred, const Scene& scene, float w_cls, float w_box) {
    const int nq = pred.scores.shape[0];
    const int c = pred.scores.shape[1];
    const int m = int(scene.objects.size());
    if (m < 1) throw std::invalid_argument("build_cost: scene has no objects");
    CostMatrix cm{Tensor::matrix(nq, m)};
    for (int g = 0; g < m; ++g) {
        const auto& o = scene.objects[g];
        if (o.class_id < 0 || o.class_id >= c)
            throw std::invalid_argument("build_cost: object class " + std::to_string(o.class_id) +
                                        " outside the model's " + std::to_string(c) + " classes");
        const float gt[4] = {o.cx, o.cy, o.w, o.h};
        for (int q = 0; q < nq; ++q) {
            double l1 = 0.0;
            for (int d = 0; d < 4; ++d) l1 += std::abs(double(pred.boxes.at(q, d)) - double(gt[d]));
            cm.values.at(q, g) = float(-double(w_cls) * double(pred.scores.at(q, o.class_id)) + double(w_box) * l1);
        }
    }
    return cm;
}

Assignment hungarian(const CostMatrix& cost) {
    const int nq = cost.num_queries();
    const int m = cost.num_targets();
    if (m > nq)
        throw std::invalid_argument("hungarian: more targets than queries (" + std::to_string(m) + " > " +
                                    std::to_string(nq) + ")");
    if (!cost.values.all_finite()) throw std::invalid_argument("hungarian: cost entries must be finite");
    if (m <= kSubsetDpMaxTargets) return detail::hungarian_subset_dp(cost);
    return detail::hungarian_padded_km(cost);
}

autograd::NodeId set_loss_graph(autograd::Graph& g, const GraphPredictions& preds, const Scene& scene,
                                const LossConfig& cfg, std::vector<Assignment>* per_layer,
                                std::vector<CostMatrix>* per_layer_costs) {
    const int layers = int(preds.scores.size());
    if (layers < 1) throw std::invalid_argument("set_loss: no layer predictions");
    const int m = int(scene.objects.size());

    autograd::NodeId total = -1;
    for (int l = 0; l < layers; ++l) {
        Prediction pv{g.value(preds.scores[l]), g.value(preds.boxes[l]), l};
        const int nq = pv.scores.shape[0];
        const int c = pv.scores.shape[1];
        CostMatrix cm = build_cost(pv, scene, cfg.w_cls, cfg.w_box);
        Assignment a = hungarian(cm);

        Tensor cls_targets = Tensor::matrix(nq, c);
        Tensor box_targets = Tensor::matrix(nq, 4);
        Tensor box_mask = Tensor::matrix(nq, 4);
        for (auto [q, gt] : a.pairs) {
            const auto& o = scene.objects[gt];
            cls_targets.at(q, o.class_id) = 1.0f;
            box_targets.at(q, 0) = o.cx;
            box_targets.at(q, 1) = o.cy;
            box_targets.at(q, 2) = o.w;
            box_targets.at(q, 3) = o.h;
            for (int d = 0; d < 4; ++d) box_mask.at(q, d) = 1.0f;
        }

        autograd::NodeId focal =
            g.focal_loss(preds.scores[l], std::move(cls_targets), cfg.focal_alpha, cfg.focal_gamma);
        autograd::NodeId l1 = g.masked_l1(preds.boxes[l], std::move(box_targets), std::move(box_mask));
        autograd::NodeId layer_loss =
            g.add(g.scale(focal, cfg.w_cls / float(m)), g.scale(l1, cfg.w_box / float(m)));
        total = (total < 0) ? layer_loss : g.add(total, layer_loss);

        if (per_layer) per_layer->push_back(std::move(a));
        if (per_layer_costs) per_layer_costs->push_back(std::move(cm));
    }
    return g.scale(total, 1.0f / float(layers));
}

float set_loss_value(const std::vector<Prediction>& preds, const Scene& scene, const LossConfig& cfg) {
    autograd::Graph g;
    GraphPredictions gp;
    for (const auto& p : preds) {
        gp.scores.push_back(g.input(p.scores));
        gp.boxes.push_back(g.input(p.boxes));
    }
    return g.value(set_loss_graph(g, gp, scene, cfg)).data[0];
}

}  // namespace gpq
