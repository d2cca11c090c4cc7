#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "gpq/tensor.hpp"

namespace gpq {

// A trainable tensor. Gradients accumulate (+=) across backward passes and
// are zeroed explicitly by the optimizer step.
struct Param {
    Tensor value;
    std::vector<float> grad;

    Param() = default;
    explicit Param(Tensor v) : value(std::move(v)), grad(value.numel(), 0.0f) {}

    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
    void resize_like_value() { grad.assign(value.numel(), 0.0f); }
};

namespace autograd {

using NodeId = int32_t;

enum class Op : uint8_t {
    Leaf,
    Input,
    MatMul,
    Transpose,
    Add,
    Mul,
    AddBias,
    Scale,
    Relu,
    Sigmoid,
    SoftmaxRows,
    LayerNorm,
    SliceCols,
    ConcatCols,
    Sinusoid,
    Sum,
    FocalLoss,
    MaskedL1,
};

// Append-only reverse-mode tape. Node inputs always precede the node, so a
// single reverse sweep visits every node after all of its consumers.
class Graph {
public:
    NodeId leaf(Param& p);
    NodeId input(Tensor t);

    NodeId matmul(NodeId a, NodeId b);
    NodeId transpose(NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId add_bias(NodeId x, NodeId bias);
    NodeId scale(NodeId x, float c);
    NodeId relu(NodeId x);
    NodeId sigmoid(NodeId x);
    NodeId softmax_rows(NodeId x);
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, float eps = 1e-5f);
    NodeId slice_cols(NodeId x, int c0, int c1);
    NodeId concat_cols(std::span<const NodeId> parts);
    NodeId sinusoid(NodeId points, std::vector<float> freqs);
    NodeId sum(NodeId x);
    // Sigmoid focal loss against 0/1 targets, summed over all entries.
    // Operates on probabilities so that exact 0/1 scores give exact zeros.
    NodeId focal_loss(NodeId probs, Tensor targets, float alpha, float gamma);
    // sum(mask * |x - target|)
    NodeId masked_l1(NodeId x, Tensor target, Tensor mask);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    // Gradient of the last backward pass; empty if the node was unreachable.
    std::span<const float> grad(NodeId id) const { return nodes_[id].grad; }
    Op op_kind(NodeId id) const { return nodes_[id].op; }
    size_t size() const { return nodes_.size(); }

    // Reverse sweep from a scalar loss followed by a flush of leaf gradients
    // into their Params. Rejects non-scalar losses.
    void backward(NodeId loss, float seed = 1.0f);

    // Staged variants for batch-parallel training: sweeps touch only
    // node-local buffers, flush (serial, in sample order) touches Params.
    void sweep_backward(NodeId loss, float seed = 1.0f);
    void flush_leaf_grads();

private:
    struct Node {
        Op op;
        std::vector<NodeId> inputs;
        Tensor value;
        std::vector<float> grad;
        std::function<void(Graph&, NodeId)> backprop;
        Param* param = nullptr;
    };

    NodeId push(Node n);
    std::vector<float>& grad_buf(NodeId id);
    const Tensor& in_val(NodeId id, int slot) const { return nodes_[nodes_[id].inputs[slot]].value; }

    std::vector<Node> nodes_;
    std::vector<NodeId> leaves_;
    std::vector<std::pair<Param*, NodeId>> leaf_cache_;
};

}  // namespace autograd
}  // namespace gpq
