#pragma once

#include <string>
#include <vector>

#include "gpq/autograd.hpp"
#include "gpq/scene.hpp"
#include "gpq/tensor.hpp"

namespace gpq {

struct ModelConfig {
    int num_queries = 64;   // Nq
    int grid = 8;           // G, Nk = G*G feature tokens
    int embed_dim = 64;     // E
    int value_dim = 64;     // Dv (must equal E inside the decoder)
    int hidden_dim = 256;   // h, FFN hidden width
    int heads = 8;          // H
    int layers = 2;         // N
    int classes = 4;        // C
    int sinusoid_freqs = 16;  // per coordinate
    float encode_sigma = 0.08f;
    int max_objects = 8;

    int num_keys() const { return grid * grid; }
    int encoding_dim() const { return 2 * sinusoid_freqs * 2; }
    void validate() const;  // throws std::invalid_argument naming the bad field
};

// Log-spaced angular frequencies pi..8*pi for the reference-point encoding.
std::vector<float> encoding_freqs(int count);

struct AttentionParams {
    Param wq, bq, wk, bk, wv, bv, wo, bo;
    int heads = 1;

    int embed_dim() const { return wq.value.shape[0]; }
    int value_dim() const { return wv.value.shape[0]; }
};

struct LayerNormParams {
    Param gain, bias;
};

struct DecoderLayer {
    AttentionParams self_attn;
    AttentionParams cross_attn;
    Param ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    LayerNormParams norm_self, norm_cross, norm_ffn, norm_out;
};

struct Decoder {
    std::vector<DecoderLayer> layers;
};

struct Heads {
    Param cls_w1, cls_b1, cls_w2, cls_b2;
    Param box_w1, box_b1, box_w2, box_b2;
};

struct RetiredPoint {
    int original_index;
    float x, y;
};

// Learnable reference points plus the MLP that turns their sinusoidal
// encoding into query embeddings. Pruned rows are physically removed from
// ref_points; `alive` maps surviving rows to original indices and `retired`
// keeps the last coordinates of removed points for the export tooling.
struct QueryBank {
    Param ref_points;  // [alive x 2]
    Param emb_w1, emb_b1, emb_w2, emb_b2;
    std::vector<int> alive;
    std::vector<RetiredPoint> retired;

    int alive_count() const { return int(alive.size()); }
    int initial_count() const { return int(alive.size() + retired.size()); }
    int row_of(int original_index) const;  // -1 when pruned
    // Removes the given current rows (indices into ref_points), recording
    // their last coordinates. Rows may arrive in any order.
    void remove_rows(std::vector<int> rows);
};

struct SceneEncoder {
    Param pos_embed;    // [Nk x E]
    Param class_embed;  // [C x E]
};

struct Model {
    ModelConfig cfg;
    SceneEncoder encoder;
    QueryBank bank;
    Decoder decoder;
    Heads heads;

    static Model init(const ModelConfig& cfg, Rng& rng);

    // Stable name -> Param listing; checkpoint payload order and optimizer
    // state keys both follow it.
    std::vector<std::pair<std::string, Param*>> named_params();
    void zero_grads();
};

}  // namespace gpq
