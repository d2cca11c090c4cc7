// Independent oracles shared by the unit tests and the acceptance suite.
// Everything here recomputes results from first principles in double
// precision and stays independent of the implementation paths it checks.

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "gpq/autograd.hpp"
#include "gpq/detector.hpp"
#include "gpq/matching.hpp"
#include "gpq/model.hpp"
#include "gpq/tensor.hpp"

namespace oracles {

// Entry-by-entry triple loop in double precision.
inline gpq::Tensor matmul_naive(const gpq::Tensor& a, const gpq::Tensor& b) {
    int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    gpq::Tensor c = gpq::Tensor::matrix(m, n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += double(a.at(i, t)) * double(b.at(t, j));
            c.at(i, j) = float(acc);
        }
    return c;
}

// Minimum-cost injective assignment of ground truths to queries by exhaustive
// recursion; the total sums cost entries over ground truths in ascending
// order, matching the implementation's canonical total.
inline double brute_force_assignment(const gpq::CostMatrix& cost) {
    const int nq = cost.num_queries();
    const int m = cost.num_targets();
    std::vector<char> used(nq, 0);
    double best = std::numeric_limits<double>::infinity();
    std::function<void(int, double)> rec = [&](int g, double acc) {
        if (g == m) {
            if (acc < best) best = acc;
            return;
        }
        for (int q = 0; q < nq; ++q) {
            if (used[q]) continue;
            used[q] = 1;
            rec(g + 1, acc + double(cost.values.at(q, g)));
            used[q] = 0;
        }
    };
    rec(0, 0.0);
    return best;
}

// ---------------------------------------------------------------------------
// Double-precision forward reimplementation used as the finite-difference
// oracle. Naive loops throughout.
namespace f64 {

struct DTensor {
    int rows = 0, cols = 0;
    std::vector<double> data;

    DTensor() = default;
    DTensor(int r, int c) : rows(r), cols(c), data(size_t(r) * c, 0.0) {}
    double& at(int r, int c) { return data[size_t(r) * cols + c]; }
    double at(int r, int c) const { return data[size_t(r) * cols + c]; }
};

inline DTensor widen(const gpq::Tensor& t) {
    DTensor d(t.rows(), t.cols());
    for (size_t i = 0; i < t.data.size(); ++i) d.data[i] = double(t.data[i]);
    return d;
}

inline DTensor widen(const gpq::Param& p) { return widen(p.value); }

inline DTensor matmul(const DTensor& a, const DTensor& b) {
    DTensor c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int t = 0; t < a.cols; ++t) acc += a.at(i, t) * b.at(t, j);
            c.at(i, j) = acc;
        }
    return c;
}

inline DTensor transpose(const DTensor& x) {
    DTensor y(x.cols, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) y.at(j, i) = x.at(i, j);
    return y;
}

inline DTensor add(const DTensor& a, const DTensor& b) {
    DTensor y = a;
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += b.data[i];
    return y;
}

inline DTensor mul(const DTensor& a, const DTensor& b) {
    DTensor y = a;
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] *= b.data[i];
    return y;
}

inline DTensor add_bias(const DTensor& x, const DTensor& bias) {
    DTensor y = x;
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) y.at(i, j) += bias.data[j];
    return y;
}

inline DTensor scale(const DTensor& x, double c) {
    DTensor y = x;
    for (double& v : y.data) v *= c;
    return y;
}

inline DTensor relu(const DTensor& x) {
    DTensor y = x;
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    return y;
}

inline DTensor sigmoid(const DTensor& x) {
    DTensor y = x;
    for (double& v : y.data) v = 1.0 / (1.0 + std::exp(-v));
    return y;
}

inline DTensor softmax_rows(const DTensor& x) {
    DTensor y(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        double m = x.at(i, 0);
        for (int j = 1; j < x.cols; ++j) m = std::max(m, x.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < x.cols; ++j) {
            y.at(i, j) = std::exp(x.at(i, j) - m);
            sum += y.at(i, j);
        }
        for (int j = 0; j < x.cols; ++j) y.at(i, j) /= sum;
    }
    return y;
}

inline DTensor layer_norm(const DTensor& x, const DTensor& gain, const DTensor& bias, double eps = 1e-5) {
    DTensor y(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        double mean = 0.0;
        for (int j = 0; j < x.cols; ++j) mean += x.at(i, j);
        mean /= x.cols;
        double var = 0.0;
        for (int j = 0; j < x.cols; ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
        var /= x.cols;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < x.cols; ++j) y.at(i, j) = (x.at(i, j) - mean) * inv * gain.data[j] + bias.data[j];
    }
    return y;
}

inline DTensor slice_cols(const DTensor& x, int c0, int c1) {
    DTensor y(x.rows, c1 - c0);
    for (int i = 0; i < x.rows; ++i)
        for (int j = c0; j < c1; ++j) y.at(i, j - c0) = x.at(i, j);
    return y;
}

inline DTensor concat_cols(const std::vector<DTensor>& parts) {
    int total = 0;
    for (const auto& p : parts) total += p.cols;
    DTensor y(parts[0].rows, total);
    int off = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < p.rows; ++i)
            for (int j = 0; j < p.cols; ++j) y.at(i, off + j) = p.at(i, j);
        off += p.cols;
    }
    return y;
}

inline DTensor sinusoid(const DTensor& pts, const std::vector<float>& freqs) {
    int f = int(freqs.size());
    DTensor y(pts.rows, pts.cols * f * 2);
    for (int i = 0; i < pts.rows; ++i)
        for (int d = 0; d < pts.cols; ++d)
            for (int ff = 0; ff < f; ++ff) {
                double arg = double(freqs[ff]) * pts.at(i, d);
                y.at(i, d * 2 * f + 2 * ff) = std::sin(arg);
                y.at(i, d * 2 * f + 2 * ff + 1) = std::cos(arg);
            }
    return y;
}

inline double sum(const DTensor& x) {
    double acc = 0.0;
    for (double v : x.data) acc += v;
    return acc;
}

inline double focal_loss(const DTensor& p, const gpq::Tensor& targets, double alpha, double gamma) {
    double acc = 0.0;
    for (size_t i = 0; i < p.data.size(); ++i) {
        double v = p.data[i];
        if (targets.data[i] > 0.5f)
            acc += -alpha * std::pow(1.0 - v, gamma) * std::log(std::max(v, 1e-12));
        else
            acc += -(1.0 - alpha) * std::pow(v, gamma) * std::log(std::max(1.0 - v, 1e-12));
    }
    return acc;
}

inline double masked_l1(const DTensor& x, const gpq::Tensor& target, const gpq::Tensor& mask) {
    double acc = 0.0;
    for (size_t i = 0; i < x.data.size(); ++i)
        acc += double(mask.data[i]) * std::abs(x.data[i] - double(target.data[i]));
    return acc;
}

inline DTensor linear(const DTensor& x, const gpq::Param& w, const gpq::Param& b) {
    return add_bias(matmul(x, widen(w)), widen(b));
}

inline DTensor mlp2(const DTensor& x, const gpq::Param& w1, const gpq::Param& b1, const gpq::Param& w2,
                    const gpq::Param& b2) {
    return linear(relu(linear(x, w1, b1)), w2, b2);
}

inline DTensor attention(const DTensor& q, const DTensor& k, const DTensor& v, const gpq::AttentionParams& p) {
    DTensor qp = linear(q, p.wq, p.bq);
    DTensor kp = linear(k, p.wk, p.bk);
    DTensor vp = linear(v, p.wv, p.bv);
    const int e = p.wq.value.shape[0];
    const int dv = p.wv.value.shape[0];
    const int heads = p.heads;
    const int ew = e / heads, vw = dv / heads;
    double inv = 1.0 / std::sqrt(double(dv) / double(heads));
    std::vector<DTensor> outs;
    for (int h = 0; h < heads; ++h) {
        DTensor qh = slice_cols(qp, h * ew, (h + 1) * ew);
        DTensor kh = slice_cols(kp, h * ew, (h + 1) * ew);
        DTensor vh = slice_cols(vp, h * vw, (h + 1) * vw);
        DTensor w = softmax_rows(scale(matmul(qh, transpose(kh)), inv));
        outs.push_back(matmul(w, vh));
    }
    return linear(concat_cols(outs), p.wo, p.bo);
}

// Mirrors the production decoder: post-norm around each sub-block plus the
// per-layer output norm.
inline std::vector<DTensor> decoder(const DTensor& queries, const DTensor& features, const gpq::Decoder& dec) {
    std::vector<DTensor> states;
    DTensor q = queries;
    for (const auto& layer : dec.layers) {
        DTensor sa = attention(q, q, q, layer.self_attn);
        q = layer_norm(add(q, sa), widen(layer.norm_self.gain), widen(layer.norm_self.bias));
        DTensor ca = attention(q, features, features, layer.cross_attn);
        q = layer_norm(add(q, ca), widen(layer.norm_cross.gain), widen(layer.norm_cross.bias));
        DTensor ff = mlp2(q, layer.ffn_w1, layer.ffn_b1, layer.ffn_w2, layer.ffn_b2);
        q = layer_norm(add(q, ff), widen(layer.norm_ffn.gain), widen(layer.norm_ffn.bias));
        q = layer_norm(q, widen(layer.norm_out.gain), widen(layer.norm_out.bias));
        states.push_back(q);
    }
    return states;
}

// Full-pipeline set loss with frozen per-layer assignments. Reads the model's
// current (possibly perturbed) float parameters, widens them and recomputes
// everything in double.
inline double model_set_loss(gpq::Model& m, const gpq::Scene& scene, const gpq::LossConfig& cfg,
                             const std::vector<std::vector<std::pair<int, int>>>& frozen_pairs) {
    DTensor mix = widen(gpq::gaussian_class_mix(scene, m.cfg.grid, m.cfg.classes, m.cfg.encode_sigma));
    DTensor features = add(widen(m.encoder.pos_embed), matmul(mix, widen(m.encoder.class_embed)));
    DTensor enc = sinusoid(widen(m.bank.ref_points), gpq::encoding_freqs(m.cfg.sinusoid_freqs));
    DTensor queries = mlp2(enc, m.bank.emb_w1, m.bank.emb_b1, m.bank.emb_w2, m.bank.emb_b2);
    auto states = decoder(queries, features, m.decoder);

    const int nq = queries.rows;
    const int c = m.cfg.classes;
    const int mm = int(scene.objects.size());
    double total = 0.0;
    for (size_t l = 0; l < states.size(); ++l) {
        DTensor scores = sigmoid(mlp2(states[l], m.heads.cls_w1, m.heads.cls_b1, m.heads.cls_w2, m.heads.cls_b2));
        DTensor boxes = sigmoid(mlp2(states[l], m.heads.box_w1, m.heads.box_b1, m.heads.box_w2, m.heads.box_b2));
        gpq::Tensor cls_t = gpq::Tensor::matrix(nq, c);
        gpq::Tensor box_t = gpq::Tensor::matrix(nq, 4);
        gpq::Tensor box_m = gpq::Tensor::matrix(nq, 4);
        for (auto [q, g] : frozen_pairs[l]) {
            const auto& o = scene.objects[g];
            cls_t.at(q, o.class_id) = 1.0f;
            box_t.at(q, 0) = o.cx;
            box_t.at(q, 1) = o.cy;
            box_t.at(q, 2) = o.w;
            box_t.at(q, 3) = o.h;
            for (int d = 0; d < 4; ++d) box_m.at(q, d) = 1.0f;
        }
        total += double(cfg.w_cls) * focal_loss(scores, cls_t, cfg.focal_alpha, cfg.focal_gamma) / mm +
                 double(cfg.w_box) * masked_l1(boxes, box_t, box_m) / mm;
    }
    return total / double(states.size());
}

}  // namespace f64

// ---------------------------------------------------------------------------
// Central finite differences of a double-precision oracle against the tape's
// analytic gradients. The fd step uses the realized float steps, so the
// comparison tolerance is limited only by the analytic path's own precision.

struct GradCheckResult {
    bool ok = true;
    double worst_abs_err = 0.0;
    double worst_rel_err = 0.0;
    int checked = 0;
    // Coordinates where the two one-sided slopes disagree: a kink (relu, |.|)
    // crosses zero inside the step, so the central difference estimates
    // nothing. They are excluded, and callers bound how many may occur.
    int skipped_nonsmooth = 0;
};

// Compares the tape's analytic gradients against central differences of a
// double-precision oracle evaluation of the same expression.
inline GradCheckResult check_gradients(
    std::vector<gpq::Param>& params,
    const std::function<gpq::autograd::NodeId(gpq::autograd::Graph&, std::vector<gpq::autograd::NodeId>&)>& build_f32,
    const std::function<double(const std::vector<gpq::Param>&)>& eval_f64, float step = 1e-3f, double rel_tol = 1e-3,
    double abs_floor = 1e-5) {
    std::vector<std::vector<float>> analytic(params.size());
    {
        gpq::autograd::Graph g;
        std::vector<gpq::autograd::NodeId> ids;
        for (auto& p : params) {
            p.zero_grad();
            ids.push_back(g.leaf(p));
        }
        g.backward(build_f32(g, ids));
        for (size_t i = 0; i < params.size(); ++i) analytic[i] = params[i].grad;
    }
    const double base = eval_f64(params);

    GradCheckResult res;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& data = params[pi].value.data;
        for (size_t i = 0; i < data.size(); ++i) {
            float keep = data[i];
            float up_x = keep + step;
            float down_x = keep - step;
            data[i] = up_x;
            double up = eval_f64(params);
            data[i] = down_x;
            double down = eval_f64(params);
            data[i] = keep;
            double fd = (up - down) / (double(up_x) - double(down_x));
            double d_up = (up - base) / (double(up_x) - double(keep));
            double d_down = (base - down) / (double(keep) - double(down_x));
            if (std::abs(d_up - d_down) > 1e-2 * std::max(1.0, std::abs(fd))) {
                ++res.skipped_nonsmooth;
                continue;
            }
            double an = double(analytic[pi][i]);
            double abs_err = std::abs(an - fd);
            double denom = std::max(std::abs(an), std::abs(fd));
            double rel_err = denom > 0.0 ? abs_err / denom : 0.0;
            ++res.checked;
            if (abs_err > res.worst_abs_err) res.worst_abs_err = abs_err;
            if (abs_err > abs_floor) {
                if (rel_err > res.worst_rel_err) res.worst_rel_err = rel_err;
                if (rel_err > rel_tol) res.ok = false;
            }
        }
    }
    return res;
}

}  // namespace oracles
