#include "gpq/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "gpq/kernels.hpp"

namespace gpq {

int64_t matmul_flops(int64_t m, int64_t n, int64_t k) { return 2 * m * n * k; }

FlopsConfig FlopsConfig::from_model(const ModelConfig& cfg, int num_queries) {
    FlopsConfig f;
    f.num_queries = num_queries >= 0 ? num_queries : cfg.num_queries;
    f.num_keys = cfg.num_keys();
    f.embed_dim = cfg.embed_dim;
    f.value_dim = cfg.value_dim;
    f.hidden_dim = cfg.hidden_dim;
    f.heads = cfg.heads;
    f.layers = cfg.layers;
    f.classes = cfg.classes;
    f.encoding_dim = cfg.encoding_dim();
    return f;
}

namespace {

// Q,K projections on E, V,O projections on Dv, score and weighted-sum
// products, plus 5 FLOPs per softmax element. Head count drops out: per-head
// products sum to the single-head totals.
int64_t attention_op_flops(int64_t nq, int64_t nk, int64_t e, int64_t dv) {
    int64_t proj = matmul_flops(nq, e, e) + matmul_flops(nk, e, e) + matmul_flops(nk, dv, dv) +
                   matmul_flops(nq, dv, dv);
    int64_t attn = matmul_flops(nq, nk, e) + matmul_flops(nq, nk, dv);
    int64_t softmax = 5 * nq * nk;
    return proj + attn + softmax;
}

}  // namespace

FlopsReport count_flops(const FlopsConfig& cfg) {
    if (cfg.num_queries < 1 || cfg.num_keys < 1 || cfg.embed_dim < 1 || cfg.value_dim < 1 || cfg.hidden_dim < 1 ||
        cfg.layers < 1 || cfg.classes < 1 || cfg.encoding_dim < 1)
        throw std::invalid_argument("count_flops: all dimensions must be positive");
    const int64_t nq = cfg.num_queries, nk = cfg.num_keys, e = cfg.embed_dim, dv = cfg.value_dim;
    const int64_t h = cfg.hidden_dim, n = cfg.layers, c = cfg.classes, s = cfg.encoding_dim;

    FlopsReport r;
    r.config = cfg;
    r.self_attention = n * attention_op_flops(nq, nq, e, dv);
    r.cross_attention = n * attention_op_flops(nq, nk, e, dv);
    r.ffn = n * (matmul_flops(nq, h, e) + matmul_flops(nq, e, h));
    r.heads = n * (matmul_flops(nq, e, e) + matmul_flops(nq, c, e) +   // classification
                   matmul_flops(nq, e, e) + matmul_flops(nq, 4, e));   // box
    r.query_embed = 2 * nq * s + matmul_flops(nq, e, s) + matmul_flops(nq, e, e);
    r.total = r.self_attention + r.cross_attention + r.ffn + r.heads + r.query_embed;
    return r;
}

namespace {

std::vector<Prediction> forward_with_features(Model& m, const Tensor& features) {
    ValueBackend b;
    auto enc = b.sinusoid(b.leaf(m.bank.ref_points), encoding_freqs(m.cfg.sinusoid_freqs));
    auto queries = mlp2_fwd(b, std::move(enc), m.bank.emb_w1, m.bank.emb_b1, m.bank.emb_w2, m.bank.emb_b2);
    auto states = decoder_fwd(b, std::move(queries), features, m.decoder);
    std::vector<Prediction> preds;
    preds.reserve(states.size());
    for (size_t l = 0; l < states.size(); ++l) {
        Prediction p;
        p.scores = b.sigmoid(mlp2_fwd(b, states[l], m.heads.cls_w1, m.heads.cls_b1, m.heads.cls_w2, m.heads.cls_b2));
        p.boxes = b.sigmoid(mlp2_fwd(b, states[l], m.heads.box_w1, m.heads.box_b1, m.heads.box_w2, m.heads.box_b2));
        p.layer_index = int(l);
        preds.push_back(std::move(p));
    }
    return preds;
}

double percentile(std::vector<double> sorted, double q) {
    if (sorted.empty()) return 0.0;
    double pos = q * double(sorted.size() - 1);
    size_t lo = size_t(pos);
    size_t hi = std::min(lo + 1, sorted.size() - 1);
    double frac = pos - double(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

LatencyStats measure_latency(Model& m, std::span<const Scene> scenes, int trials, int warmup) {
    if (trials < 30) throw std::invalid_argument("measure_latency: need at least 30 trials, got " + std::to_string(trials));
    if (scenes.empty()) throw std::invalid_argument("measure_latency: empty scene set");
    if (warmup < 5) warmup = 5;

    std::vector<Tensor> features;
    features.reserve(scenes.size());
    {
        ValueBackend b;
        for (const auto& s : scenes) features.push_back(encode_scene_fwd(b, m.encoder, s, m.cfg));
    }

    kernels::ScopedSerial serial;
    volatile float sink = 0.0f;  // keeps the forwards from being optimized out
    for (int i = 0; i < warmup; ++i) {
        auto preds = forward_with_features(m, features[i % features.size()]);
        sink = sink + preds.back().scores.data[0];
    }

    LatencyStats stats;
    stats.trials = trials;
    stats.samples_ms.reserve(trials);
    for (int i = 0; i < trials; ++i) {
        const Tensor& f = features[i % features.size()];
        auto t0 = std::chrono::steady_clock::now();
        auto preds = forward_with_features(m, f);
        auto t1 = std::chrono::steady_clock::now();
        sink = sink + preds.back().scores.data[0];
        stats.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::vector<double> sorted = stats.samples_ms;
    std::sort(sorted.begin(), sorted.end());
    stats.median_ms = percentile(sorted, 0.5);
    stats.p90_ms = percentile(sorted, 0.9);
    return stats;
}

std::vector<int64_t> selection_frequency(Model& m, std::span<const Scene> scenes, int k) {
    std::vector<int64_t> counts(m.bank.alive_count(), 0);
    std::vector<std::vector<Detection>> per_scene(scenes.size());
#pragma omp parallel for schedule(static) if (scenes.size() > 8)
    for (size_t i = 0; i < scenes.size(); ++i) {
        auto preds = forward_values(m, scenes[i]);
        per_scene[i] = select_topk(preds.back(), k);
    }
    for (const auto& dets : per_scene)
        for (const auto& d : dets) counts[d.query_index] += 1;
    return counts;
}

EvalResult eval_map_detections(std::span<const std::vector<Detection>> per_scene, std::span<const Scene> scenes,
                               std::span<const float> thresholds, int classes) {
    if (scenes.empty()) throw std::invalid_argument("eval: empty scene set");
    if (per_scene.size() != scenes.size()) throw std::invalid_argument("eval: detections/scenes size mismatch");

    EvalResult result;
    double class_ap_sum = 0.0;
    int classes_with_gt = 0;
    for (int c = 0; c < classes; ++c) {
        int total_gt = 0;
        for (const auto& s : scenes)
            for (const auto& o : s.objects)
                if (o.class_id == c) ++total_gt;
        if (total_gt == 0) continue;
        ++classes_with_gt;

        struct Det {
            float score;
            int scene;
            float cx, cy;
        };
        std::vector<Det> dets;
        for (size_t si = 0; si < per_scene.size(); ++si)
            for (const auto& d : per_scene[si])
                if (d.class_id == c) dets.push_back({d.score, int(si), d.box[0], d.box[1]});
        std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) { return a.score > b.score; });

        double threshold_ap_sum = 0.0;
        for (float thr : thresholds) {
            std::vector<std::vector<char>> taken(scenes.size());
            for (size_t si = 0; si < scenes.size(); ++si) taken[si].assign(scenes[si].objects.size(), 0);

            int tp = 0, fp = 0;
            std::vector<double> prec, rec;
            prec.reserve(dets.size());
            rec.reserve(dets.size());
            for (const auto& d : dets) {
                const auto& objs = scenes[d.scene].objects;
                int best = -1;
                double best_dist = double(thr);
                for (size_t gi = 0; gi < objs.size(); ++gi) {
                    if (objs[gi].class_id != c || taken[d.scene][gi]) continue;
                    double dx = double(d.cx) - double(objs[gi].cx);
                    double dy = double(d.cy) - double(objs[gi].cy);
                    double dist = std::sqrt(dx * dx + dy * dy);
                    if (dist <= best_dist) {
                        best_dist = dist;
                        best = int(gi);
                    }
                }
                if (best >= 0) {
                    taken[d.scene][best] = 1;
                    ++tp;
                } else {
                    ++fp;
                }
                prec.push_back(double(tp) / double(tp + fp));
                rec.push_back(double(tp) / double(total_gt));
            }

            // 101-point interpolation: max precision at recall >= r.
            double ap = 0.0;
            for (int ri = 0; ri <= 100; ++ri) {
                double r = ri / 100.0;
                double best_p = 0.0;
                for (size_t i = 0; i < prec.size(); ++i)
                    if (rec[i] >= r) best_p = std::max(best_p, prec[i]);
                ap += best_p;
            }
            ap /= 101.0;
            result.per_class.push_back({c, thr, ap});
            threshold_ap_sum += ap;
        }
        class_ap_sum += threshold_ap_sum / double(thresholds.size());
    }
    result.map = classes_with_gt ? class_ap_sum / double(classes_with_gt) : 0.0;
    return result;
}

EvalResult eval_map(Model& m, std::span<const Scene> scenes, const EvalConfig& cfg) {
    if (scenes.empty()) throw std::invalid_argument("eval: empty scene set");
    std::vector<std::vector<Detection>> per_scene(scenes.size());
#pragma omp parallel for schedule(static) if (scenes.size() > 8)
    for (size_t i = 0; i < scenes.size(); ++i) {
        auto preds = forward_values(m, scenes[i]);
        per_scene[i] = select_topk(preds.back(), std::min(cfg.topk, preds.back().scores.shape[0] * m.cfg.classes));
    }
    return eval_map_detections(per_scene, scenes, cfg.thresholds, m.cfg.classes);
}

namespace {

std::string fmt_float(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    return out;
}

}  // namespace

void export_reference_points(const QueryBank& bank, const std::string& path) {
    auto out = open_out(path);
    out << "index,x,y,alive\n";
    struct Row {
        int index;
        float x, y;
        int alive;
    };
    std::vector<Row> rows;
    rows.reserve(bank.initial_count());
    for (int r = 0; r < bank.alive_count(); ++r)
        rows.push_back({bank.alive[r], bank.ref_points.value.at(r, 0), bank.ref_points.value.at(r, 1), 1});
    for (const auto& rp : bank.retired) rows.push_back({rp.original_index, rp.x, rp.y, 0});
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.index < b.index; });
    for (const auto& r : rows)
        out << r.index << ',' << fmt_float(r.x) << ',' << fmt_float(r.y) << ',' << r.alive << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

void write_flops_csv(const std::string& path, const FlopsReport& report) {
    auto out = open_out(path);
    out << "submodule,count\n";
    out << "self_attention," << report.self_attention << '\n';
    out << "cross_attention," << report.cross_attention << '\n';
    out << "ffn," << report.ffn << '\n';
    out << "heads," << report.heads << '\n';
    out << "query_embed," << report.query_embed << '\n';
    out << "total," << report.total << '\n';
}

void write_frequency_csv(const std::string& path, std::span<const int64_t> counts) {
    auto out = open_out(path);
    out << "query_index,count\n";
    std::vector<std::pair<int64_t, int>> rows;  // (count, query)
    for (size_t i = 0; i < counts.size(); ++i) rows.emplace_back(counts[i], int(i));
    std::sort(rows.begin(), rows.end());
    for (const auto& [count, q] : rows) out << q << ',' << count << '\n';
}

void write_eval_csv(const std::string& path, const EvalResult& result) {
    auto out = open_out(path);
    out << "class,threshold,ap\n";
    for (const auto& row : result.per_class)
        out << row.class_id << ',' << fmt_float(double(row.threshold)) << ',' << fmt_float(row.ap) << '\n';
}

void write_latency_csv(const std::string& path, const LatencyStats& stats) {
    auto out = open_out(path);
    out << "trial,ms\n";
    for (size_t i = 0; i < stats.samples_ms.size(); ++i) out << i << ',' << fmt_float(stats.samples_ms[i]) << '\n';
}

}  // namespace gpq
