#include "gpq/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gpq {

namespace {

void check(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("model config: " + msg);
}

Param linear_weight(int in, int out, Rng& rng) {
    Tensor w = Tensor::matrix(in, out);
    float a = xavier_bound(in, out);
    rng.fill_uniform(w, -a, a);
    return Param(std::move(w));
}

Param zeros_vec(int n) { return Param(Tensor({n}, 0.0f)); }
Param ones_vec(int n) { return Param(Tensor({n}, 1.0f)); }

AttentionParams make_attention(int e, int dv, int heads, Rng& rng) {
    AttentionParams p;
    p.wq = linear_weight(e, e, rng);
    p.bq = zeros_vec(e);
    p.wk = linear_weight(e, e, rng);
    p.bk = zeros_vec(e);
    p.wv = linear_weight(dv, dv, rng);
    p.bv = zeros_vec(dv);
    p.wo = linear_weight(dv, dv, rng);
    p.bo = zeros_vec(dv);
    p.heads = heads;
    return p;
}

LayerNormParams make_norm(int n) { return {ones_vec(n), zeros_vec(n)}; }

}  // namespace

void ModelConfig::validate() const {
    check(num_queries >= 1, "num_queries must be >= 1, got " + std::to_string(num_queries));
    check(grid >= 1, "grid must be >= 1, got " + std::to_string(grid));
    check(embed_dim >= 2, "embed_dim must be >= 2, got " + std::to_string(embed_dim));
    check(value_dim == embed_dim, "value_dim must equal embed_dim inside the decoder, got " +
                                      std::to_string(value_dim) + " vs " + std::to_string(embed_dim));
    check(heads >= 1, "heads must be >= 1, got " + std::to_string(heads));
    check(embed_dim % heads == 0,
          "heads must divide embed_dim: " + std::to_string(heads) + " does not divide " + std::to_string(embed_dim));
    check(value_dim % heads == 0,
          "heads must divide value_dim: " + std::to_string(heads) + " does not divide " + std::to_string(value_dim));
    check(hidden_dim > value_dim, "hidden_dim must exceed value_dim, got " + std::to_string(hidden_dim) +
                                      " <= " + std::to_string(value_dim));
    check(layers >= 1, "layers must be >= 1, got " + std::to_string(layers));
    check(classes >= 2, "classes must be >= 2, got " + std::to_string(classes));
    check(sinusoid_freqs >= 2, "sinusoid_freqs must be >= 2, got " + std::to_string(sinusoid_freqs));
    check(encode_sigma > 0.0f, "encode_sigma must be positive");
    check(max_objects >= 1, "max_objects must be >= 1, got " + std::to_string(max_objects));
}

std::vector<float> encoding_freqs(int count) {
    std::vector<float> freqs(count);
    const double pi = 3.14159265358979323846;
    for (int i = 0; i < count; ++i) freqs[i] = float(pi * std::exp2(3.0 * i / (count - 1)));
    return freqs;
}

int QueryBank::row_of(int original_index) const {
    auto it = std::lower_bound(alive.begin(), alive.end(), original_index);
    if (it == alive.end() || *it != original_index) return -1;
    return int(it - alive.begin());
}

void QueryBank::remove_rows(std::vector<int> rows) {
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    if (!rows.empty() && (rows.front() < 0 || rows.back() >= alive_count()))
        throw std::invalid_argument("query bank: row out of range");
    for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
        int row = *it;
        retired.push_back({alive[row], ref_points.value.at(row, 0), ref_points.value.at(row, 1)});
        alive.erase(alive.begin() + row);
        auto& data = ref_points.value.data;
        data.erase(data.begin() + size_t(row) * 2, data.begin() + size_t(row) * 2 + 2);
        ref_points.value.shape[0] -= 1;
    }
    ref_points.resize_like_value();
    std::sort(retired.begin(), retired.end(),
              [](const RetiredPoint& a, const RetiredPoint& b) { return a.original_index < b.original_index; });
}

Model Model::init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    const int e = cfg.embed_dim;
    const int dv = cfg.value_dim;
    const int nk = cfg.num_keys();
    const int s = cfg.encoding_dim();

    float emb_a = std::sqrt(3.0f / float(e));
    m.encoder.pos_embed = Param(Tensor::matrix(nk, e));
    rng.fill_uniform(m.encoder.pos_embed.value, -emb_a, emb_a);
    m.encoder.class_embed = Param(Tensor::matrix(cfg.classes, e));
    rng.fill_uniform(m.encoder.class_embed.value, -emb_a, emb_a);

    m.bank.ref_points = Param(Tensor::matrix(cfg.num_queries, 2));
    rng.fill_uniform(m.bank.ref_points.value, 0.0f, 1.0f);
    m.bank.emb_w1 = linear_weight(s, e, rng);
    m.bank.emb_b1 = zeros_vec(e);
    m.bank.emb_w2 = linear_weight(e, e, rng);
    m.bank.emb_b2 = zeros_vec(e);
    m.bank.alive.resize(cfg.num_queries);
    for (int i = 0; i < cfg.num_queries; ++i) m.bank.alive[i] = i;

    m.decoder.layers.reserve(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l) {
        DecoderLayer layer;
        layer.self_attn = make_attention(e, dv, cfg.heads, rng);
        layer.cross_attn = make_attention(e, dv, cfg.heads, rng);
        layer.ffn_w1 = linear_weight(e, cfg.hidden_dim, rng);
        layer.ffn_b1 = zeros_vec(cfg.hidden_dim);
        layer.ffn_w2 = linear_weight(cfg.hidden_dim, e, rng);
        layer.ffn_b2 = zeros_vec(e);
        layer.norm_self = make_norm(e);
        layer.norm_cross = make_norm(e);
        layer.norm_ffn = make_norm(e);
        layer.norm_out = make_norm(e);
        m.decoder.layers.push_back(std::move(layer));
    }

    m.heads.cls_w1 = linear_weight(e, e, rng);
    m.heads.cls_b1 = zeros_vec(e);
    m.heads.cls_w2 = linear_weight(e, cfg.classes, rng);
    // Prior-probability bias so untrained classification scores start near
    // 0.01, which keeps the focal loss from being swamped by negatives.
    m.heads.cls_b2 = Param(Tensor({cfg.classes}, -std::log(99.0f)));
    m.heads.box_w1 = linear_weight(e, e, rng);
    m.heads.box_b1 = zeros_vec(e);
    m.heads.box_w2 = linear_weight(e, 4, rng);
    m.heads.box_b2 = zeros_vec(4);
    return m;
}

std::vector<std::pair<std::string, Param*>> Model::named_params() {
    std::vector<std::pair<std::string, Param*>> out;
    auto put = [&](const std::string& name, Param& p) { out.emplace_back(name, &p); };
    put("encoder.pos_embed", encoder.pos_embed);
    put("encoder.class_embed", encoder.class_embed);
    put("bank.ref_points", bank.ref_points);
    put("bank.emb_w1", bank.emb_w1);
    put("bank.emb_b1", bank.emb_b1);
    put("bank.emb_w2", bank.emb_w2);
    put("bank.emb_b2", bank.emb_b2);
    for (size_t l = 0; l < decoder.layers.size(); ++l) {
        auto& layer = decoder.layers[l];
        std::string base = "layer" + std::to_string(l) + ".";
        auto put_attn = [&](const std::string& tag, AttentionParams& a) {
            put(base + tag + ".wq", a.wq);
            put(base + tag + ".bq", a.bq);
            put(base + tag + ".wk", a.wk);
            put(base + tag + ".bk", a.bk);
            put(base + tag + ".wv", a.wv);
            put(base + tag + ".bv", a.bv);
            put(base + tag + ".wo", a.wo);
            put(base + tag + ".bo", a.bo);
        };
        put_attn("self", layer.self_attn);
        put_attn("cross", layer.cross_attn);
        put(base + "ffn_w1", layer.ffn_w1);
        put(base + "ffn_b1", layer.ffn_b1);
        put(base + "ffn_w2", layer.ffn_w2);
        put(base + "ffn_b2", layer.ffn_b2);
        auto put_norm = [&](const std::string& tag, LayerNormParams& nrm) {
            put(base + tag + ".gain", nrm.gain);
            put(base + tag + ".bias", nrm.bias);
        };
        put_norm("norm_self", layer.norm_self);
        put_norm("norm_cross", layer.norm_cross);
        put_norm("norm_ffn", layer.norm_ffn);
        put_norm("norm_out", layer.norm_out);
    }
    put("heads.cls_w1", heads.cls_w1);
    put("heads.cls_b1", heads.cls_b1);
    put("heads.cls_w2", heads.cls_w2);
    put("heads.cls_b2", heads.cls_b2);
    put("heads.box_w1", heads.box_w1);
    put("heads.box_b1", heads.box_b1);
    put("heads.box_w2", heads.box_w2);
    put("heads.box_b2", heads.box_b2);
    return out;
}

void Model::zero_grads() {
    for (auto& [name, p] : named_params()) p->zero_grad();
}

}  // namespace gpq
