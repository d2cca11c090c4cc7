#include "gpq/autograd.hpp"

#include <cmath>
#include <stdexcept>

#include "gpq/kernels.hpp"
#include "gpq/tensor_ops.hpp"

namespace gpq::autograd {

namespace {
constexpr double kLogFloor = 1e-12;
}

NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return NodeId(nodes_.size() - 1);
}

std::vector<float>& Graph::grad_buf(NodeId id) {
    auto& g = nodes_[id].grad;
    if (g.empty()) g.assign(nodes_[id].value.numel(), 0.0f);
    return g;
}

NodeId Graph::leaf(Param& p) {
    for (auto& [ptr, id] : leaf_cache_)
        if (ptr == &p) return id;
    Node n;
    n.op = Op::Leaf;
    n.value = p.value;
    n.param = &p;
    NodeId id = push(std::move(n));
    leaves_.push_back(id);
    leaf_cache_.emplace_back(&p, id);
    return id;
}

NodeId Graph::input(Tensor t) {
    Node n;
    n.op = Op::Input;
    n.value = std::move(t);
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    Node n;
    n.op = Op::MatMul;
    n.inputs = {a, b};
    n.value = ops::matmul(nodes_[a].value, nodes_[b].value);
    n.backprop = [](Graph& g, NodeId self) {
        Tensor grad(g.nodes_[self].value.shape, g.nodes_[self].grad);
        NodeId a_id = g.nodes_[self].inputs[0], b_id = g.nodes_[self].inputs[1];
        Tensor da = ops::matmul(grad, ops::transpose(g.nodes_[b_id].value));
        auto& ga = g.grad_buf(a_id);
        for (size_t i = 0; i < da.data.size(); ++i) ga[i] += da.data[i];
        Tensor db = ops::matmul(ops::transpose(g.nodes_[a_id].value), grad);
        auto& gb = g.grad_buf(b_id);
        for (size_t i = 0; i < db.data.size(); ++i) gb[i] += db.data[i];
    };
    return push(std::move(n));
}

NodeId Graph::transpose(NodeId x) {
    Node n;
    n.op = Op::Transpose;
    n.inputs = {x};
    n.value = ops::transpose(nodes_[x].value);
    int m = nodes_[x].value.shape[0], c = nodes_[x].value.shape[1];
    n.backprop = [m, c](Graph& g, NodeId self) {
        const auto& grad = g.nodes_[self].grad;
        auto& gx = g.grad_buf(g.nodes_[self].inputs[0]);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < c; ++j) gx[size_t(i) * c + j] += grad[size_t(j) * m + i];
    };
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Add;
    n.inputs = {a, b};
    n.value = ops::add(nodes_[a].value, nodes_[b].value);
    n.backprop = [](Graph& g, NodeId self) {
        const auto& grad = g.nodes_[self].grad;
        for (int slot = 0; slot < 2; ++slot) {
            auto& gi = g.grad_buf(g.nodes_[self].inputs[slot]);
            for (size_t i = 0; i < grad.size(); ++i) gi[i] += grad[i];
        }
    };
    return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Mul;
    n.inputs = {a, b};
    n.value = ops::mul(nodes_[a].value, nodes_[b].value);
    n.backprop = [](Graph& g, NodeId self) {
        const auto& grad = g.nodes_[self].grad;
        NodeId a_id = g.nodes_[self].inputs[0], b_id = g.nodes_[self].inputs[1];
        const auto& av = g.nodes_[a_id].value.data;
        const auto& bv = g.nodes_[b_id].value.data;
        auto& ga = g.grad_buf(a_id);
        auto& gb = g.grad_buf(b_id);
        for (size_t i = 0; i < grad.size(); ++i) {
            ga[i] += grad[i] * bv[i];
            gb[i] += grad[i] * av[i];
        }
    };
    return push(std::move(n));
}

NodeId Graph::add_bias(NodeId x, NodeId bias) {
    Node n;
    n.op = Op::AddBias;
    n.inputs = {x, bias};
    n.value = ops::add_bias(nodes_[x].value, nodes_[bias].value);
    int m = n.value.shape[0], c = n.value.shape[1];
    n.backprop = [m, c](Graph& g, NodeId self) {
        const auto& grad = g.nodes_[self].grad;
        auto& gx = g.grad_buf(g.nodes_[self].inputs[0]);
        for (size_t i = 0; i < grad.size(); ++i) gx[i] += grad[i];
        auto& gb = g.grad_buf(g.nodes_[self].inputs[1]);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < c; ++j) gb[j] += grad[size_t(i) * c + j];
    };
    return push(std::move(n));
}

NodeId Graph::scale(NodeId x, float c) {
    Node n;
    n.op = Op::Scale;
    n.inputs = {x};
    n.value = ops::scale(nodes_[x].value, c);
    n.backprop = [c](Graph& g, NodeId self) {
        const auto& grad = g.nodes_[self].grad;
        auto& gx = g.grad_buf(g.nodes_[self].inputs[0]);
        for (size_t i = 0; i < grad.size(); ++i) gx[i] += c * grad[i];
    };
    return push(std::move(n));
}

NodeId Graph::relu(NodeId x) {
    Node n;
    n.op = Op::Relu;
    n.inputs = {x};
    n.value = ops::relu(nodes_[x].value);
    n.backprop = [](Graph& g, NodeId self) {
        const auto& grad = g.nodes_[self].grad;
        NodeId x_id = g.nodes_[self].inputs[0];
        const auto& xv = g.nodes_[x_id].value.data;
        auto& gx = g.grad_buf(x_id);
        for (size_t i = 0; i < grad.size(); ++i)
            if (xv[i] > 0.0f) gx[i] += grad[i];
    };
    return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId x) {
    Node n;
    n.op = Op::Sigmoid;
    n.inputs = {x};
    n.value = ops::sigmoid(nodes_[x].value);
    n.backprop = [](Graph& g, NodeId self) {
        const auto& grad = g.nodes_[self].grad;
        const auto& yv = g.nodes_[self].value.data;
        auto& gx = g.grad_buf(g.nodes_[self].inputs[0]);
        for (size_t i = 0; i < grad.size(); ++i) gx[i] += grad[i] * yv[i] * (1.0f - yv[i]);
    };
    return push(std::move(n));
}

NodeId Graph::softmax_rows(NodeId x) {
    Node n;
    n.op = Op::SoftmaxRows;
    n.inputs = {x};
    n.value = ops::softmax_rows(nodes_[x].value);
    int m = n.value.shape[0], c = n.value.shape[1];
    n.backprop = [m, c](Graph& g, NodeId self) {
        const auto& grad = g.nodes_[self].grad;
        const auto& yv = g.nodes_[self].value.data;
        auto& gx = g.grad_buf(g.nodes_[self].inputs[0]);
        for (int i = 0; i < m; ++i) {
            const float* yr = yv.data() + size_t(i) * c;
            const float* gr = grad.data() + size_t(i) * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += double(yr[j]) * double(gr[j]);
            float* gxr = gx.data() + size_t(i) * c;
            for (int j = 0; j < c; ++j) gxr[j] += yr[j] * (gr[j] - float(dot));
        }
    };
    return push(std::move(n));
}

NodeId Graph::layer_norm(NodeId x, NodeId gain, NodeId bias, float eps) {
    Node n;
    n.op = Op::LayerNorm;
    n.inputs = {x, gain, bias};
    n.value = ops::layer_norm(nodes_[x].value, nodes_[gain].value, nodes_[bias].value, eps);
    int m = n.value.shape[0], c = n.value.shape[1];
    n.backprop = [m, c, eps](Graph& g, NodeId self) {
        const auto& grad = g.nodes_[self].grad;
        NodeId x_id = g.nodes_[self].inputs[0];
        NodeId gain_id = g.nodes_[self].inputs[1];
        NodeId bias_id = g.nodes_[self].inputs[2];
        const auto& xv = g.nodes_[x_id].value.data;
        const auto& gv = g.nodes_[gain_id].value.data;
        auto& gx = g.grad_buf(x_id);
        auto& ggain = g.grad_buf(gain_id);
        auto& gbias = g.grad_buf(bias_id);
        std::vector<double> xhat(c);
        for (int i = 0; i < m; ++i) {
            const float* xr = xv.data() + size_t(i) * c;
            const float* gr = grad.data() + size_t(i) * c;
            double mean = 0.0;
            for (int j = 0; j < c; ++j) mean += double(xr[j]);
            mean /= c;
            double var = 0.0;
            for (int j = 0; j < c; ++j) {
                double d = double(xr[j]) - mean;
                var += d * d;
            }
            var /= c;
            double inv_std = 1.0 / std::sqrt(var + double(eps));
            double mean_gg = 0.0, mean_ggx = 0.0;
            for (int j = 0; j < c; ++j) {
                xhat[j] = (double(xr[j]) - mean) * inv_std;
                double gg = double(gr[j]) * double(gv[j]);
                mean_gg += gg;
                mean_ggx += gg * xhat[j];
            }
            mean_gg /= c;
            mean_ggx /= c;
            float* gxr = gx.data() + size_t(i) * c;
            for (int j = 0; j < c; ++j) {
                double gg = double(gr[j]) * double(gv[j]);
                gxr[j] += float(inv_std * (gg - mean_gg - xhat[j] * mean_ggx));
                ggain[j] += float(double(gr[j]) * xhat[j]);
                gbias[j] += gr[j];
            }
        }
    };
    return push(std::move(n));
}

NodeId Graph::slice_cols(NodeId x, int c0, int c1) {
    Node n;
    n.op = Op::SliceCols;
    n.inputs = {x};
    n.value = ops::slice_cols(nodes_[x].value, c0, c1);
    int m = nodes_[x].value.shape[0], c = nodes_[x].value.shape[1];
    int w = c1 - c0;
    n.backprop = [m, c, c0, w](Graph& g, NodeId self) {
        const auto& grad = g.nodes_[self].grad;
        auto& gx = g.grad_buf(g.nodes_[self].inputs[0]);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) gx[size_t(i) * c + c0 + j] += grad[size_t(i) * w + j];
    };
    return push(std::move(n));
}

NodeId Graph::concat_cols(std::span<const NodeId> parts) {
    std::vector<const Tensor*> vals;
    vals.reserve(parts.size());
    for (NodeId p : parts) vals.push_back(&nodes_[p].value);
    Node n;
    n.op = Op::ConcatCols;
    n.inputs.assign(parts.begin(), parts.end());
    n.value = ops::concat_cols(vals);
    int m = n.value.shape[0], total = n.value.shape[1];
    n.backprop = [m, total](Graph& g, NodeId self) {
        const auto& grad = g.nodes_[self].grad;
        int off = 0;
        for (NodeId p : g.nodes_[self].inputs) {
            int w = g.nodes_[p].value.shape[1];
            auto& gp = g.grad_buf(p);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j) gp[size_t(i) * w + j] += grad[size_t(i) * total + off + j];
            off += w;
        }
    };
    return push(std::move(n));
}

NodeId Graph::sinusoid(NodeId points, std::vector<float> freqs) {
    Node n;
    n.op = Op::Sinusoid;
    n.inputs = {points};
    n.value = ops::sinusoid(nodes_[points].value, freqs);
    int m = nodes_[points].value.shape[0], d = nodes_[points].value.shape[1];
    int f = int(freqs.size());
    int w = d * f * 2;
    n.backprop = [m, d, f, w, freqs = std::move(freqs)](Graph& g, NodeId self) {
        const auto& grad = g.nodes_[self].grad;
        NodeId p_id = g.nodes_[self].inputs[0];
        const auto& pv = g.nodes_[p_id].value.data;
        auto& gp = g.grad_buf(p_id);
        for (int i = 0; i < m; ++i) {
            for (int dd = 0; dd < d; ++dd) {
                float coord = pv[size_t(i) * d + dd];
                double acc = 0.0;
                for (int ff = 0; ff < f; ++ff) {
                    float arg = freqs[ff] * coord;
                    int col = dd * (2 * f) + 2 * ff;
                    acc += double(freqs[ff]) * double(std::cos(arg)) * double(grad[size_t(i) * w + col]);
                    acc -= double(freqs[ff]) * double(std::sin(arg)) * double(grad[size_t(i) * w + col + 1]);
                }
                gp[size_t(i) * d + dd] += float(acc);
            }
        }
    };
    return push(std::move(n));
}

NodeId Graph::sum(NodeId x) {
    Node n;
    n.op = Op::Sum;
    n.inputs = {x};
    n.value = ops::sum(nodes_[x].value);
    n.backprop = [](Graph& g, NodeId self) {
        float gs = g.nodes_[self].grad[0];
        auto& gx = g.grad_buf(g.nodes_[self].inputs[0]);
        for (float& v : gx) v += gs;
    };
    return push(std::move(n));
}

NodeId Graph::focal_loss(NodeId probs, Tensor targets, float alpha, float gamma) {
    Node n;
    n.op = Op::FocalLoss;
    n.inputs = {probs};
    n.value = ops::focal_loss(nodes_[probs].value, targets, alpha, gamma);
    n.backprop = [targets = std::move(targets), alpha, gamma](Graph& g, NodeId self) {
        float gs = g.nodes_[self].grad[0];
        NodeId p_id = g.nodes_[self].inputs[0];
        const auto& pv = g.nodes_[p_id].value.data;
        auto& gp = g.grad_buf(p_id);
        for (size_t i = 0; i < pv.size(); ++i) {
            double p = std::min(std::max(double(pv[i]), kLogFloor), 1.0 - kLogFloor);
            double d;
            if (targets.data[i] > 0.5f) {
                double q = 1.0 - p;
                d = double(alpha) *
                    (gamma * std::pow(q, double(gamma) - 1.0) * std::log(p) - std::pow(q, double(gamma)) / p);
            } else {
                d = double(1.0f - alpha) * (std::pow(p, double(gamma)) / (1.0 - p) -
                                            gamma * std::pow(p, double(gamma) - 1.0) * std::log(1.0 - p));
            }
            gp[i] += gs * float(d);
        }
    };
    return push(std::move(n));
}

NodeId Graph::masked_l1(NodeId x, Tensor target, Tensor mask) {
    Node n;
    n.op = Op::MaskedL1;
    n.inputs = {x};
    n.value = ops::masked_l1(nodes_[x].value, target, mask);
    n.backprop = [target = std::move(target), mask = std::move(mask)](Graph& g, NodeId self) {
        float gs = g.nodes_[self].grad[0];
        NodeId x_id = g.nodes_[self].inputs[0];
        const auto& xv = g.nodes_[x_id].value.data;
        auto& gx = g.grad_buf(x_id);
        for (size_t i = 0; i < xv.size(); ++i) {
            float diff = xv[i] - target.data[i];
            float s = diff > 0.0f ? 1.0f : (diff < 0.0f ? -1.0f : 0.0f);
            gx[i] += gs * mask.data[i] * s;
        }
    };
    return push(std::move(n));
}

void Graph::sweep_backward(NodeId loss, float seed) {
    if (nodes_[loss].value.numel() != 1)
        throw std::invalid_argument("backward: loss must be a scalar, got " + shape_str(nodes_[loss].value.shape));
    for (auto& n : nodes_) n.grad.clear();
    grad_buf(loss)[0] = seed;
    for (NodeId id = loss; id >= 0; --id) {
        auto& n = nodes_[id];
        if (n.grad.empty() || !n.backprop) continue;
        n.backprop(*this, id);
    }
}

void Graph::flush_leaf_grads() {
    for (NodeId id : leaves_) {
        auto& n = nodes_[id];
        if (n.grad.empty()) continue;
        auto& pg = n.param->grad;
        for (size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    }
}

void Graph::backward(NodeId loss, float seed) {
    sweep_backward(loss, seed);
    flush_leaf_grads();
}

}  // namespace gpq::autograd
