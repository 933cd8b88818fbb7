#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// Every op returns a Var whose node remembers its parents and a backward
// closure. Var::backward() on a scalar walks the graph in reverse
// topological order. Leaves created with requires_grad accumulate gradients
// across backward calls until zero_grad().

#include <functional>
#include <memory>
#include <vector>

#include "lepde/tensor.hpp"

namespace lepde::ag {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    /// Adds g into grad, allocating it on first use.
    void accumulate(const Tensor& g);
    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const { return static_cast<bool>(node_); }

    /// Gradient of the last backward pass; zeros if none reached this node.
    Tensor grad() const;
    void zero_grad();

    /// Seeds d(this)/d(this) = 1; this must hold a single element.
    void backward() const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

/// Builds a result node. backward receives the result node, whose grad is set.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

Var constant(Tensor t);

// Dense layers. x: [B, in], weight: [out, in], bias: [out].
Var linear(const Var& x, const Var& weight, const Var& bias);

struct ConvGeometry {
    int stride_h = 1, stride_w = 1;
    int pad_h = 0, pad_w = 0;
};

int conv_out_extent(int in, int kernel, int stride, int pad);

// x: [B, Cin, H, W], weight: [Cout, Cin, kh, kw], bias: [Cout].
// One-dimensional convolutions use H = 1, kh = 1.
Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry g);

// x: [B, Cin, H, W], weight: [Cin, Cout, kh, kw], bias: [Cout]. The output
// extent is given explicitly; it must be reachable with output padding < stride.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry g, int out_h, int out_w);

// x: [B, C, ...]; gamma, beta: [C].
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);

Var elu(const Var& x);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var reshape(const Var& a, Shape shape);

/// [B, n1] ++ [B, n2] -> [B, n1 + n2].
Var concat_features(const Var& a, const Var& b);
/// Concatenates along axis 0; trailing extents must agree.
Var stack_rows(const std::vector<Var>& parts);
/// Rows [start, start + count) along axis 0.
Var slice_rows(const Var& a, int start, int count);

// Losses. Each reduces to a single-element Var averaged over axis 0.
Var mse(const Var& pred, const Var& target);
Var rmse(const Var& pred, const Var& target);
Var relative_l2(const Var& pred, const Var& target);
/// mean_b ||pred_b - target_b||^2 / max(||target_b||^2, floor).
Var relative_sq_error(const Var& pred, const Var& target, double floor = 1e-8);

/// Sum of single-element Vars.
Var sum_scalars(const std::vector<Var>& terms);

}  // namespace lepde::ag
