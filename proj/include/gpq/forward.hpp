#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "gpq/autograd.hpp"
#include "gpq/model.hpp"
#include "gpq/tensor_ops.hpp"

namespace gpq {

// Per-head attention weight matrices observed during a forward pass, in
// invocation order (self then cross, per layer).
struct AttentionTrace {
    std::vector<Tensor> head_weights;
};

struct ForwardOptions {
    bool self_attention = true;
    bool layer_norm = true;
    AttentionTrace* trace = nullptr;
};

// The decoder math is written once against a backend: ValueBackend executes
// eagerly for inference, GraphBackend records the autograd tape for training.
// Both call the same ops, so the two modes are bit-identical.
struct ValueBackend {
    using Handle = Tensor;
    Handle leaf(Param& p) { return p.value; }
    Handle input(Tensor t) { return t; }
    Handle matmul(const Handle& a, const Handle& b) { return ops::matmul(a, b); }
    Handle transpose(const Handle& x) { return ops::transpose(x); }
    Handle add(const Handle& a, const Handle& b) { return ops::add(a, b); }
    Handle add_bias(const Handle& x, const Handle& b) { return ops::add_bias(x, b); }
    Handle scale(const Handle& x, float c) { return ops::scale(x, c); }
    Handle relu(const Handle& x) { return ops::relu(x); }
    Handle sigmoid(const Handle& x) { return ops::sigmoid(x); }
    Handle softmax_rows(const Handle& x) { return ops::softmax_rows(x); }
    Handle layer_norm(const Handle& x, const Handle& g, const Handle& b) { return ops::layer_norm(x, g, b); }
    Handle slice_cols(const Handle& x, int c0, int c1) { return ops::slice_cols(x, c0, c1); }
    Handle concat_cols(const std::vector<Handle>& parts) {
        std::vector<const Tensor*> ptrs;
        ptrs.reserve(parts.size());
        for (const auto& p : parts) ptrs.push_back(&p);
        return ops::concat_cols(ptrs);
    }
    Handle sinusoid(const Handle& pts, const std::vector<float>& freqs) { return ops::sinusoid(pts, freqs); }
    const Tensor& peek(const Handle& h) const { return h; }
};

struct GraphBackend {
    autograd::Graph& g;
    using Handle = autograd::NodeId;
    Handle leaf(Param& p) { return g.leaf(p); }
    Handle input(Tensor t) { return g.input(std::move(t)); }
    Handle matmul(Handle a, Handle b) { return g.matmul(a, b); }
    Handle transpose(Handle x) { return g.transpose(x); }
    Handle add(Handle a, Handle b) { return g.add(a, b); }
    Handle add_bias(Handle x, Handle b) { return g.add_bias(x, b); }
    Handle scale(Handle x, float c) { return g.scale(x, c); }
    Handle relu(Handle x) { return g.relu(x); }
    Handle sigmoid(Handle x) { return g.sigmoid(x); }
    Handle softmax_rows(Handle x) { return g.softmax_rows(x); }
    Handle layer_norm(Handle x, Handle gain, Handle b) { return g.layer_norm(x, gain, b); }
    Handle slice_cols(Handle x, int c0, int c1) { return g.slice_cols(x, c0, c1); }
    Handle concat_cols(const std::vector<Handle>& parts) { return g.concat_cols(parts); }
    Handle sinusoid(Handle pts, const std::vector<float>& freqs) { return g.sinusoid(pts, freqs); }
    const Tensor& peek(Handle h) const { return g.value(h); }
};

// Softmax((Q Wq)(K Wk)^T / sqrt(Dv/H)) (V Wv) Wo with heads realized as
// column reshapes of the projected matrices.
template <class B>
typename B::Handle attention_fwd(B& b, typename B::Handle q, typename B::Handle k, typename B::Handle v,
                                 AttentionParams& p, AttentionTrace* trace = nullptr) {
    using H = typename B::Handle;
    const int e = p.embed_dim();
    const int dv = p.value_dim();
    const int heads = p.heads;
    if (e % heads != 0 || dv % heads != 0)
        throw std::invalid_argument("attention: heads must divide embed and value dims");

    H qp = b.add_bias(b.matmul(std::move(q), b.leaf(p.wq)), b.leaf(p.bq));
    H kp = b.add_bias(b.matmul(std::move(k), b.leaf(p.wk)), b.leaf(p.bk));
    H vp = b.add_bias(b.matmul(std::move(v), b.leaf(p.wv)), b.leaf(p.bv));

    const int ew = e / heads;
    const int vw = dv / heads;
    const float inv_scale = 1.0f / std::sqrt(float(dv) / float(heads));
    std::vector<H> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        H qh = b.slice_cols(qp, h * ew, (h + 1) * ew);
        H kh = b.slice_cols(kp, h * ew, (h + 1) * ew);
        H vh = b.slice_cols(vp, h * vw, (h + 1) * vw);
        H weights = b.softmax_rows(b.scale(b.matmul(std::move(qh), b.transpose(std::move(kh))), inv_scale));
        if (trace) trace->head_weights.push_back(b.peek(weights));
        outs.push_back(b.matmul(std::move(weights), std::move(vh)));
    }
    H cat = b.concat_cols(outs);
    return b.add_bias(b.matmul(std::move(cat), b.leaf(p.wo)), b.leaf(p.bo));
}

template <class B>
typename B::Handle self_attention_fwd(B& b, typename B::Handle q, AttentionParams& p,
                                      AttentionTrace* trace = nullptr) {
    if (p.value_dim() != p.embed_dim())
        throw std::invalid_argument("self_attention: value dim must equal embed dim");
    return attention_fwd(b, q, q, q, p, trace);
}

template <class B>
typename B::Handle linear_fwd(B& b, typename B::Handle x, Param& w, Param& bias) {
    return b.add_bias(b.matmul(std::move(x), b.leaf(w)), b.leaf(bias));
}

template <class B>
typename B::Handle mlp2_fwd(B& b, typename B::Handle x, Param& w1, Param& b1, Param& w2, Param& b2) {
    return linear_fwd(b, b.relu(linear_fwd(b, std::move(x), w1, b1)), w2, b2);
}

// One pass through the stacked layers. Each sub-block is wrapped by a
// residual and a post-norm; norm_out closes the layer. Returns every
// intermediate state for deep supervision.
template <class B>
std::vector<typename B::Handle> decoder_fwd(B& b, typename B::Handle queries, typename B::Handle features,
                                            Decoder& dec, const ForwardOptions& opt = {}) {
    using H = typename B::Handle;
    if (b.peek(queries).shape[0] < 1) throw std::invalid_argument("decoder: empty query set");
    auto maybe_norm = [&](H x, LayerNormParams& nrm) {
        if (!opt.layer_norm) return x;
        return b.layer_norm(std::move(x), b.leaf(nrm.gain), b.leaf(nrm.bias));
    };
    std::vector<H> states;
    states.reserve(dec.layers.size());
    H q = std::move(queries);
    for (auto& layer : dec.layers) {
        if (opt.self_attention) {
            H sa = self_attention_fwd(b, q, layer.self_attn, opt.trace);
            q = maybe_norm(b.add(std::move(q), std::move(sa)), layer.norm_self);
        }
        H ca = attention_fwd(b, q, features, features, layer.cross_attn, opt.trace);
        q = maybe_norm(b.add(std::move(q), std::move(ca)), layer.norm_cross);
        H ff = mlp2_fwd(b, q, layer.ffn_w1, layer.ffn_b1, layer.ffn_w2, layer.ffn_b2);
        q = maybe_norm(b.add(std::move(q), std::move(ff)), layer.norm_ffn);
        q = maybe_norm(q, layer.norm_out);
        states.push_back(q);
    }
    return states;
}

// F_I: per-cell positional embedding plus the class-weighted gaussian mix of
// the scene's objects. Differentiable in both embedding tables.
template <class B>
typename B::Handle encode_scene_fwd(B& b, SceneEncoder& enc, const Scene& scene, const ModelConfig& cfg) {
    Tensor mix = gaussian_class_mix(scene, cfg.grid, cfg.classes, cfg.encode_sigma);
    return b.add(b.leaf(enc.pos_embed), b.matmul(b.input(std::move(mix)), b.leaf(enc.class_embed)));
}

// Full pipeline: reference points -> queries -> decoder -> per-layer
// classification scores and boxes (both sigmoid).
template <class B>
struct ModelOutputs {
    std::vector<typename B::Handle> scores;  // per layer, [Nq x C]
    std::vector<typename B::Handle> boxes;   // per layer, [Nq x 4]
};

// Eager single-call entry points.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionParams& p,
                        AttentionTrace* trace = nullptr) {
    ValueBackend b;
    return attention_fwd(b, q, k, v, p, trace);
}

inline Tensor self_attention(const Tensor& q, AttentionParams& p, AttentionTrace* trace = nullptr) {
    ValueBackend b;
    return self_attention_fwd(b, q, p, trace);
}

inline std::vector<Tensor> decoder_forward(const Tensor& queries, const Tensor& features, Decoder& d,
                                           const ForwardOptions& opt = {}) {
    ValueBackend b;
    return decoder_fwd(b, queries, features, d, opt);
}

template <class B>
ModelOutputs<B> model_fwd(B& b, Model& m, const Scene& scene, const ForwardOptions& opt = {}) {
    using H = typename B::Handle;
    if (m.bank.alive_count() < 1) throw std::invalid_argument("model forward: no alive queries");
    H features = encode_scene_fwd(b, m.encoder, scene, m.cfg);
    H enc = b.sinusoid(b.leaf(m.bank.ref_points), encoding_freqs(m.cfg.sinusoid_freqs));
    H queries = mlp2_fwd(b, std::move(enc), m.bank.emb_w1, m.bank.emb_b1, m.bank.emb_w2, m.bank.emb_b2);
    auto states = decoder_fwd(b, std::move(queries), std::move(features), m.decoder, opt);
    ModelOutputs<B> out;
    out.scores.reserve(states.size());
    out.boxes.reserve(states.size());
    for (auto& st : states) {
        out.scores.push_back(b.sigmoid(mlp2_fwd(b, st, m.heads.cls_w1, m.heads.cls_b1, m.heads.cls_w2, m.heads.cls_b2)));
        out.boxes.push_back(b.sigmoid(mlp2_fwd(b, st, m.heads.box_w1, m.heads.box_b1, m.heads.box_w2, m.heads.box_b2)));
    }
    return out;
}

}  // namespace gpq
