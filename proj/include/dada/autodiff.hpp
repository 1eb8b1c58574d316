#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dada/tensor.hpp"

namespace dada::ad {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty means "no gradient yet"
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into the parents that require grad.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const noexcept { return !backward_fn; }
    void accumulate(const Tensor<T>& g);
    Tensor<T>& grad_buffer();  // allocates zeros on first use
};

/// Handle on a node of the computation graph. Copies share the node.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false);
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    void zero_grad() { node_->grad = Tensor<T>(); }
    bool defined() const noexcept { return static_cast<bool>(node_); }

    /// Same data, no gradient flow back into this node's ancestors.
    Var detach() const;

    const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Reverse-mode pass from a scalar. Leaf gradients accumulate across calls;
/// intermediate gradients are reset at the start of every call.
template <typename T>
void backward(const Var<T>& loss);

struct ConvGeometry {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
};

inline std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel, const ConvGeometry& g) {
    return (in + 2 * g.padding - g.dilation * (kernel - 1) - 1) / g.stride + 1;
}

// Element-wise and structural ops. Feature maps are [C, H, W].
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
/// x [C,H,W] times z [1,H,W], z broadcast over channels.
template <typename T> Var<T> mul_broadcast_channels(const Var<T>& x, const Var<T>& z);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
/// Weighted sum with a constant tensor of the same shape.
template <typename T> Var<T> dot(const Var<T>& a, const Tensor<T>& weights);

/// weight [Cout, Cin, K, K]; bias [Cout] or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry g);

template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> leaky_relu(const Var<T>& x, T slope);
template <typename T> Var<T> softplus(const Var<T>& x);
/// Normalized exponential over the channel axis of [C,H,W].
template <typename T> Var<T> softmax_channels(const Var<T>& x);
/// 3x3 mean filter, stride 1, zero padding excluded from the divisor.
template <typename T> Var<T> avg_pool3x3(const Var<T>& x);
/// Half-pixel-centred bilinear resize of [C,H,W] to [C,out_h,out_w].
template <typename T> Var<T> upsample_bilinear(const Var<T>& x, std::int64_t out_h, std::int64_t out_w);

/// -p log_base(p) element-wise, 0 log 0 := 0.
template <typename T> Var<T> self_information(const Var<T>& p, double log_base);

// Fused losses; each returns a scalar Var.
template <typename T>
Var<T> seg_nll(const Var<T>& probs, std::span<const std::uint8_t> labels);
/// c = fraction * max|Z - z| is held constant in the backward pass.
template <typename T>
Var<T> berhu_loss(const Var<T>& pred, const Tensor<T>& target, double fraction);
template <typename T>
Var<T> domain_bce(const Var<T>& scores, int label);

}  // namespace dada::ad
