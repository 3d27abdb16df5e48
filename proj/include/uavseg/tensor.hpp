#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace uavseg {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward;

    std::vector<float>& ensure_grad();
};

}  // namespace detail

/// Dense float tensor with reverse-mode autodiff.
///
/// A Tensor is a shared handle: copies alias the same storage and graph node.
/// Leaves created with `parameter()` accumulate gradients across backward passes
/// until `zero_grad()` is called.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, float value);
    static Tensor from(Shape shape, std::vector<float> values);
    static Tensor parameter(Shape shape, std::vector<float> values);
    static Tensor scalar(float value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const float> data() const;
    std::span<float> mutable_data();
    std::span<const float> grad() const;
    std::span<float> mutable_grad();
    float item() const;
    float at(std::size_t flat_index) const { return data()[flat_index]; }

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool has_grad() const;
    void zero_grad();

    /// Seeds d(this)/d(this) = 1 for a single-element tensor and back-propagates.
    void backward() const;

    /// Value copy detached from the graph.
    Tensor detach() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_result(Shape, std::vector<float>, std::vector<Tensor>,
                              std::function<void(detail::Node& self)>);
};

/// Builds an op output; the backward callback is only attached when grad mode
/// is on and at least one input requires grad.
Tensor make_result(Shape shape, std::vector<float> values, std::vector<Tensor> inputs,
                   std::function<void(detail::Node& self)> backward);

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// ---- linear algebra -------------------------------------------------------

/// op(a) * op(b) for rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
Tensor add_scalar(const Tensor& x, float offset);
/// x scaled by a single-element tensor.
Tensor mul_scalar(const Tensor& x, const Tensor& s);

/// v broadcast along the leading axis: out[i, ...] = x[i, ...] + v[i].
Tensor add_leading(const Tensor& x, const Tensor& v);
Tensor mul_leading(const Tensor& x, const Tensor& v);
/// v broadcast over the leading blocks: out[..., j] = x[..., j] + v[j],
/// where v covers the trailing numel(v) elements.
Tensor add_trailing(const Tensor& x, const Tensor& v);
Tensor mul_trailing(const Tensor& x, const Tensor& v);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// sum_i x_i * w_i with constant weights.
Tensor weighted_sum(const Tensor& x, std::span<const float> weights);
/// Mean over all but the leading axis: {C, ...} -> {C}.
Tensor mean_trailing(const Tensor& x);

// ---- rows, sequences ------------------------------------------------------

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int start, int count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, int start, int count);
Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);
/// Row softmax of a square score matrix; with `causal`, entries above the
/// diagonal receive probability zero.
Tensor softmax_rows(const Tensor& scores, bool causal);

// ---- spatial --------------------------------------------------------------

/// Bilinear resampling with half-pixel centers (align_corners = false) and
/// edge clamping. Accepts {C,H,W} or {H,W}.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
/// Unfolds {C,H,W} into a [C*k*k, Ho*Wo] patch matrix (zero padding).
Tensor im2col(const Tensor& x, int kernel, int stride, int pad);

// ---- fused losses (double accumulation) ------------------------------------

/// Mean binary cross-entropy on logits in the log-sum-exp form.
Tensor bce_with_logits(const Tensor& logits, std::span<const float> target);
/// 1 - (2 sum(p t) + eps) / (sum p + sum t + eps) on probabilities.
Tensor dice_from_probs(const Tensor& probs, std::span<const float> target, float eps);
/// Mean token cross-entropy over rows whose target is >= 0.
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets);

}  // namespace uavseg
