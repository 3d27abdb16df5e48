#include "uavseg/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "uavseg/errors.hpp"

namespace uavseg {

namespace {

thread_local bool g_grad_enabled = true;

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

void require(bool condition, const std::string& message) {
    if (!condition) {
        throw InternalError(message);
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw InternalError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                            " vs " + shape_string(b.shape()));
    }
}

struct AxisWeights {
    std::vector<int> lo;
    std::vector<int> hi;
    std::vector<float> w_lo;
    std::vector<float> w_hi;
};

// Half-pixel-center bilinear weights; negative source coordinates clamp to 0.
AxisWeights axis_weights(int in, int out) {
    AxisWeights w;
    w.lo.resize(out);
    w.hi.resize(out);
    w.w_lo.resize(out);
    w.w_hi.resize(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (int i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
        if (src < 0.0) {
            src = 0.0;
        }
        int i0 = static_cast<int>(std::floor(src));
        if (i0 > in - 1) {
            i0 = in - 1;
        }
        const int i1 = std::min(i0 + 1, in - 1);
        const double frac = src - static_cast<double>(i0);
        w.lo[i] = i0;
        w.hi[i] = i1;
        w.w_hi[i] = static_cast<float>(frac);
        w.w_lo[i] = static_cast<float>(1.0 - frac);
    }
    return w;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '{';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "," : "") << shape[i];
    }
    out << '}';
    return out.str();
}

std::vector<float>& detail::Node::ensure_grad() {
    if (grad.size() != value.size()) {
        grad.assign(value.size(), 0.0f);
    }
    return grad;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0f); }

Tensor Tensor::full(Shape shape, float value) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<float>(n, value));
}

Tensor Tensor::from(Shape shape, std::vector<float> values) {
    for (int d : shape) {
        if (d < 0) {
            throw InternalError("negative dimension in " + shape_string(shape));
        }
    }
    if (values.size() != shape_numel(shape)) {
        throw InternalError("value count " + std::to_string(values.size()) +
                            " does not match shape " + shape_string(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    return Tensor(std::move(node));
}

Tensor Tensor::parameter(Shape shape, std::vector<float> values) {
    Tensor t = from(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
}

Tensor Tensor::scalar(float value) { return from({1}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }

int Tensor::dim(std::size_t axis) const {
    require(axis < node_->shape.size(), "axis out of range");
    return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<const float> Tensor::data() const { return node_->value; }
std::span<float> Tensor::mutable_data() { return node_->value; }

std::span<const float> Tensor::grad() const { return node_->ensure_grad(); }
std::span<float> Tensor::mutable_grad() { return node_->ensure_grad(); }

float Tensor::item() const {
    require(numel() == 1, "item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }
bool Tensor::has_grad() const { return node_->grad.size() == node_->value.size(); }

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0f); }

Tensor Tensor::detach() const { return from(shape(), node_->value); }

void Tensor::backward() const {
    require(numel() == 1, "backward() needs a single-element tensor");
    if (!node_->requires_grad) {
        return;
    }
    // Iterative post-order DFS for a topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [current, next_parent] = stack.back();
        if (next_parent < current->parents.size()) {
            detail::Node* parent = current->parents[next_parent++].get();
            if (parent->requires_grad && seen.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(current);
            stack.pop_back();
        }
    }
    node_->ensure_grad()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward) {
            n->ensure_grad();
            n->backward();
        }
    }
}

Tensor make_result(Shape shape, std::vector<float> values, std::vector<Tensor> inputs,
                   std::function<void(detail::Node& self)> backward) {
    Tensor out = Tensor::from(std::move(shape), std::move(values));
    if (!g_grad_enabled) {
        return out;
    }
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
    if (!any) {
        return out;
    }
    detail::Node* self = out.node_.get();
    self->requires_grad = true;
    self->parents.reserve(inputs.size());
    for (auto& in : inputs) {
        self->parents.push_back(in.node_);
    }
    self->backward = [self, fn = std::move(backward)]() { fn(*self); };
    return out;
}

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 tensors, got " +
                                                shape_string(a.shape()) + " and " +
                                                shape_string(b.shape()));
    const int ar = a.dim(0), ac = a.dim(1), br = b.dim(0), bc = b.dim(1);
    const int m = transpose_a ? ac : ar;
    const int k = transpose_a ? ar : ac;
    const int k2 = transpose_b ? bc : br;
    const int n = transpose_b ? br : bc;
    require(k == k2, "matmul inner dimension mismatch " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));

    std::vector<float> out(static_cast<std::size_t>(m) * n);
    {
        ConstMap A(a.data().data(), ar, ac);
        ConstMap B(b.data().data(), br, bc);
        MutMap C(out.data(), m, n);
        if (!transpose_a && !transpose_b) {
            C.noalias() = A * B;
        } else if (transpose_a && !transpose_b) {
            C.noalias() = A.transpose() * B;
        } else if (!transpose_a && transpose_b) {
            C.noalias() = A * B.transpose();
        } else {
            C.noalias() = A.transpose() * B.transpose();
        }
    }
    detail::Node* an = a.node().get();
    detail::Node* bn = b.node().get();
    return make_result({m, n}, std::move(out), {a, b},
                       [=](detail::Node& self) {
                           ConstMap G(self.grad.data(), m, n);
                           ConstMap A(an->value.data(), ar, ac);
                           ConstMap B(bn->value.data(), br, bc);
                           if (an->requires_grad) {
                               MutMap dA(an->ensure_grad().data(), ar, ac);
                               // C = opA(A) opB(B)
                               if (!transpose_a) {
                                   if (!transpose_b) dA.noalias() += G * B.transpose();
                                   else dA.noalias() += G * B;
                               } else {
                                   if (!transpose_b) dA.noalias() += B * G.transpose();
                                   else dA.noalias() += B.transpose() * G.transpose();
                               }
                           }
                           if (bn->requires_grad) {
                               MutMap dB(bn->ensure_grad().data(), br, bc);
                               if (!transpose_b) {
                                   if (!transpose_a) dB.noalias() += A.transpose() * G;
                                   else dB.noalias() += A * G;
                               } else {
                                   if (!transpose_a) dB.noalias() += G.transpose() * A;
                                   else dB.noalias() += G.transpose() * A.transpose();
                               }
                           }
                       });
}

Tensor transpose(const Tensor& x) {
    require(x.rank() == 2, "transpose expects rank 2");
    const int r = x.dim(0), c = x.dim(1);
    std::vector<float> out(x.numel());
    MutMap(out.data(), c, r) = ConstMap(x.data().data(), r, c).transpose();
    detail::Node* xn = x.node().get();
    return make_result({c, r}, std::move(out), {x}, [=](detail::Node& self) {
        MutMap(xn->ensure_grad().data(), r, c) += ConstMap(self.grad.data(), c, r).transpose();
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    require(shape_numel(shape) == x.numel(),
            "reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
    std::vector<float> out(x.data().begin(), x.data().end());
    detail::Node* xn = x.node().get();
    return make_result(std::move(shape), std::move(out), {x}, [=](detail::Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<float> out(a.numel());
    auto av = a.data(), bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    detail::Node* an = a.node().get();
    detail::Node* bn = b.node().get();
    return make_result(a.shape(), std::move(out), {a, b}, [=](detail::Node& self) {
        for (detail::Node* p : {an, bn}) {
            if (!p->requires_grad) continue;
            auto& g = p->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0f)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<float> out(a.numel());
    auto av = a.data(), bv = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    detail::Node* an = a.node().get();
    detail::Node* bn = b.node().get();
    return make_result(a.shape(), std::move(out), {a, b}, [=](detail::Node& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
        }
    });
}

Tensor scale(const Tensor& x, float factor) {
    std::vector<float> out(x.numel());
    auto xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
    detail::Node* xn = x.node().get();
    return make_result(x.shape(), std::move(out), {x}, [=](detail::Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

Tensor add_scalar(const Tensor& x, float offset) {
    std::vector<float> out(x.numel());
    auto xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + offset;
    detail::Node* xn = x.node().get();
    return make_result(x.shape(), std::move(out), {x}, [=](detail::Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor mul_scalar(const Tensor& x, const Tensor& s) {
    require(s.numel() == 1, "mul_scalar expects a single-element factor");
    const float f = s.item();
    std::vector<float> out(x.numel());
    auto xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * f;
    detail::Node* xn = x.node().get();
    detail::Node* sn = s.node().get();
    return make_result(x.shape(), std::move(out), {x, s}, [=](detail::Node& self) {
        if (xn->requires_grad) {
            auto& g = xn->ensure_grad();
            const float factor = sn->value[0];
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
        }
        if (sn->requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                acc += static_cast<double>(self.grad[i]) * xn->value[i];
            sn->ensure_grad()[0] += static_cast<float>(acc);
        }
    });
}

namespace {

// out = x (op) v with v broadcast; `leading` selects v indexed by block row.
template <bool Multiply>
Tensor broadcast_op(const Tensor& x, const Tensor& v, bool leading) {
    const std::size_t n = x.numel();
    const std::size_t vn = v.numel();
    std::size_t rows = 0;
    std::size_t cols = 0;
    if (leading) {
        require(x.rank() >= 1 && static_cast<std::size_t>(x.dim(0)) == vn,
                "leading broadcast: " + shape_string(x.shape()) + " vs " + shape_string(v.shape()));
        rows = vn;
        cols = n / vn;
    } else {
        require(vn > 0 && n % vn == 0,
                "trailing broadcast: " + shape_string(x.shape()) + " vs " + shape_string(v.shape()));
        rows = n / vn;
        cols = vn;
    }
    std::vector<float> out(n);
    auto xv = x.data(), vv = v.data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const float b = vv[leading ? r : c];
            out[i] = Multiply ? xv[i] * b : xv[i] + b;
        }
    }
    detail::Node* xn = x.node().get();
    detail::Node* vnode = v.node().get();
    return make_result(x.shape(), std::move(out), {x, v}, [=](detail::Node& self) {
        if (xn->requires_grad) {
            auto& g = xn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    g[i] += Multiply ? self.grad[i] * vnode->value[leading ? r : c] : self.grad[i];
                }
            }
        }
        if (vnode->requires_grad) {
            auto& g = vnode->ensure_grad();
            std::vector<double> acc(vn, 0.0);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    const double term = Multiply
                                            ? static_cast<double>(self.grad[i]) * xn->value[i]
                                            : static_cast<double>(self.grad[i]);
                    acc[leading ? r : c] += term;
                }
            }
            for (std::size_t j = 0; j < vn; ++j) g[j] += static_cast<float>(acc[j]);
        }
    });
}

float sigmoid_value(float z) {
    if (z >= 0.0f) {
        return 1.0f / (1.0f + std::exp(-z));
    }
    const float e = std::exp(z);
    return e / (1.0f + e);
}

constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;

}  // namespace

Tensor add_leading(const Tensor& x, const Tensor& v) { return broadcast_op<false>(x, v, true); }
Tensor mul_leading(const Tensor& x, const Tensor& v) { return broadcast_op<true>(x, v, true); }
Tensor add_trailing(const Tensor& x, const Tensor& v) { return broadcast_op<false>(x, v, false); }
Tensor mul_trailing(const Tensor& x, const Tensor& v) { return broadcast_op<true>(x, v, false); }

Tensor sigmoid(const Tensor& x) {
    std::vector<float> out(x.numel());
    auto xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(xv[i]);
    detail::Node* xn = x.node().get();
    return make_result(x.shape(), std::move(out), {x}, [=](detail::Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const float s = self.value[i];
            g[i] += self.grad[i] * s * (1.0f - s);
        }
    });
}

Tensor relu(const Tensor& x) {
    std::vector<float> out(x.numel());
    auto xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
    detail::Node* xn = x.node().get();
    return make_result(x.shape(), std::move(out), {x}, [=](detail::Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xn->value[i] > 0.0f) g[i] += self.grad[i];
    });
}

Tensor gelu(const Tensor& x) {
    std::vector<float> out(x.numel());
    auto xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float v = xv[i];
        const float t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        out[i] = 0.5f * v * (1.0f + t);
    }
    detail::Node* xn = x.node().get();
    return make_result(x.shape(), std::move(out), {x}, [=](detail::Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const float v = xn->value[i];
            const float t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
            const float dt = (1.0f - t * t) * kGeluC * (1.0f + 3.0f * kGeluA * v * v);
            g[i] += self.grad[i] * (0.5f * (1.0f + t) + 0.5f * v * dt);
        }
    });
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    detail::Node* xn = x.node().get();
    return make_result({1}, {static_cast<float>(acc)}, {x}, [=](detail::Node& self) {
        auto& g = xn->ensure_grad();
        for (auto& gi : g) gi += self.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    require(x.numel() > 0, "mean of empty tensor");
    return scale(sum(x), 1.0f / static_cast<float>(x.numel()));
}

Tensor weighted_sum(const Tensor& x, std::span<const float> weights) {
    require(weights.size() == x.numel(), "weighted_sum weight count mismatch");
    double acc = 0.0;
    auto xv = x.data();
    for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(xv[i]) * weights[i];
    std::vector<float> w(weights.begin(), weights.end());
    detail::Node* xn = x.node().get();
    return make_result({1}, {static_cast<float>(acc)}, {x},
                       [=, w = std::move(w)](detail::Node& self) {
                           auto& g = xn->ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * w[i];
                       });
}

Tensor mean_trailing(const Tensor& x) {
    require(x.rank() >= 1 && x.dim(0) > 0, "mean_trailing on empty tensor");
    const std::size_t rows = static_cast<std::size_t>(x.dim(0));
    const std::size_t cols = x.numel() / rows;
    require(cols > 0, "mean_trailing on empty rows");
    std::vector<float> out(rows);
    auto xv = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += xv[r * cols + c];
        out[r] = static_cast<float>(acc / static_cast<double>(cols));
    }
    detail::Node* xn = x.node().get();
    return make_result({static_cast<int>(rows)}, std::move(out), {x}, [=](detail::Node& self) {
        auto& g = xn->ensure_grad();
        const float inv = 1.0f / static_cast<float>(cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[r] * inv;
    });
}

// ---- rows, sequences ------------------------------------------------------

Tensor concat_rows(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_rows of nothing");
    Shape shape = parts.front().shape();
    require(!shape.empty(), "concat_rows needs rank >= 1");
    const std::size_t row_size = parts.front().numel() / std::max(1, shape[0]);
    int rows = 0;
    for (const auto& p : parts) {
        Shape tail(p.shape().begin() + 1, p.shape().end());
        Shape ref_tail(shape.begin() + 1, shape.end());
        require(tail == ref_tail, "concat_rows trailing shape mismatch " + shape_string(p.shape()));
        rows += p.dim(0);
    }
    shape[0] = rows;
    std::vector<float> out;
    out.reserve(static_cast<std::size_t>(rows) * row_size);
    std::vector<detail::Node*> nodes;
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
        nodes.push_back(p.node().get());
    }
    return make_result(std::move(shape), std::move(out), parts, [=](detail::Node& self) {
        std::size_t offset = 0;
        for (detail::Node* p : nodes) {
            const std::size_t n = p->value.size();
            if (p->requires_grad) {
                auto& g = p->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
            }
            offset += n;
        }
    });
}

Tensor slice_rows(const Tensor& x, int start, int count) {
    require(x.rank() >= 1 && start >= 0 && count >= 0 && start + count <= x.dim(0),
            "slice_rows out of range");
    const std::size_t row_size = x.dim(0) ? x.numel() / x.dim(0) : 0;
    Shape shape = x.shape();
    shape[0] = count;
    const std::size_t begin = static_cast<std::size_t>(start) * row_size;
    const std::size_t n = static_cast<std::size_t>(count) * row_size;
    std::vector<float> out(x.data().begin() + begin, x.data().begin() + begin + n);
    detail::Node* xn = x.node().get();
    return make_result(std::move(shape), std::move(out), {x}, [=](detail::Node& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[begin + i] += self.grad[i];
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_cols of nothing");
    const int rows = parts.front().dim(0);
    int cols = 0;
    std::vector<int> widths;
    std::vector<detail::Node*> nodes;
    for (const auto& p : parts) {
        require(p.rank() == 2 && p.dim(0) == rows, "concat_cols row mismatch");
        widths.push_back(p.dim(1));
        nodes.push_back(p.node().get());
        cols += p.dim(1);
    }
    std::vector<float> out(static_cast<std::size_t>(rows) * cols);
    int offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto pv = parts[k].data();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < widths[k]; ++c)
                out[static_cast<std::size_t>(r) * cols + offset + c] = pv[static_cast<std::size_t>(r) * widths[k] + c];
        offset += widths[k];
    }
    return make_result({rows, cols}, std::move(out), parts, [=](detail::Node& self) {
        int off = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            if (nodes[k]->requires_grad) {
                auto& g = nodes[k]->ensure_grad();
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < widths[k]; ++c)
                        g[static_cast<std::size_t>(r) * widths[k] + c] +=
                            self.grad[static_cast<std::size_t>(r) * cols + off + c];
            }
            off += widths[k];
        }
    });
}

Tensor slice_cols(const Tensor& x, int start, int count) {
    require(x.rank() == 2 && start >= 0 && count >= 0 && start + count <= x.dim(1),
            "slice_cols out of range");
    const int rows = x.dim(0), cols = x.dim(1);
    std::vector<float> out(static_cast<std::size_t>(rows) * count);
    auto xv = x.data();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < count; ++c)
            out[static_cast<std::size_t>(r) * count + c] = xv[static_cast<std::size_t>(r) * cols + start + c];
    detail::Node* xn = x.node().get();
    return make_result({rows, count}, std::move(out), {x}, [=](detail::Node& self) {
        auto& g = xn->ensure_grad();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < count; ++c)
                g[static_cast<std::size_t>(r) * cols + start + c] +=
                    self.grad[static_cast<std::size_t>(r) * count + c];
    });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
    require(table.rank() == 2, "embedding table must be rank 2");
    const int vocab = table.dim(0), width = table.dim(1);
    std::vector<int> rows(ids.begin(), ids.end());
    std::vector<float> out(rows.size() * static_cast<std::size_t>(width));
    auto tv = table.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] >= 0 && rows[i] < vocab, "embedding id out of range");
        std::copy_n(tv.begin() + static_cast<std::size_t>(rows[i]) * width, width,
                    out.begin() + i * width);
    }
    detail::Node* tn = table.node().get();
    const int n = static_cast<int>(rows.size());
    return make_result({n, width}, std::move(out), {table},
                       [=, rows = std::move(rows)](detail::Node& self) {
                           auto& g = tn->ensure_grad();
                           for (std::size_t i = 0; i < rows.size(); ++i)
                               for (int c = 0; c < width; ++c)
                                   g[static_cast<std::size_t>(rows[i]) * width + c] +=
                                       self.grad[i * width + c];
                       });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    require(x.rank() == 2, "layer_norm expects rank 2");
    const int rows = x.dim(0), cols = x.dim(1);
    require(gain.numel() == static_cast<std::size_t>(cols) && bias.numel() == gain.numel(),
            "layer_norm parameter size mismatch");
    std::vector<float> out(x.numel());
    std::vector<float> xhat(x.numel());
    std::vector<float> inv_std(rows);
    auto xv = x.data(), gv = gain.data(), bv = bias.data();
    for (int r = 0; r < rows; ++r) {
        const float* row = xv.data() + static_cast<std::size_t>(r) * cols;
        double mu = 0.0;
        for (int c = 0; c < cols; ++c) mu += row[c];
        mu /= cols;
        double var = 0.0;
        for (int c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= cols;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = static_cast<float>(is);
        for (int c = 0; c < cols; ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * cols + c;
            xhat[i] = static_cast<float>((row[c] - mu) * is);
            out[i] = xhat[i] * gv[c] + bv[c];
        }
    }
    detail::Node* xn = x.node().get();
    detail::Node* gn = gain.node().get();
    detail::Node* bn = bias.node().get();
    return make_result(x.shape(), std::move(out), {x, gain, bias},
                       [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
                           for (int r = 0; r < rows; ++r) {
                               const std::size_t base = static_cast<std::size_t>(r) * cols;
                               if (gn->requires_grad || bn->requires_grad) {
                                   auto& gg = gn->ensure_grad();
                                   auto& bg = bn->ensure_grad();
                                   for (int c = 0; c < cols; ++c) {
                                       gg[c] += self.grad[base + c] * xhat[base + c];
                                       bg[c] += self.grad[base + c];
                                   }
                               }
                               if (xn->requires_grad) {
                                   double m1 = 0.0, m2 = 0.0;
                                   for (int c = 0; c < cols; ++c) {
                                       const double dy = self.grad[base + c] * gn->value[c];
                                       m1 += dy;
                                       m2 += dy * xhat[base + c];
                                   }
                                   m1 /= cols;
                                   m2 /= cols;
                                   auto& xg = xn->ensure_grad();
                                   for (int c = 0; c < cols; ++c) {
                                       const double dy = self.grad[base + c] * gn->value[c];
                                       xg[base + c] += static_cast<float>(
                                           inv_std[r] * (dy - m1 - xhat[base + c] * m2));
                                   }
                               }
                           }
                       });
}

Tensor softmax_rows(const Tensor& scores, bool causal) {
    require(scores.rank() == 2, "softmax_rows expects rank 2");
    const int rows = scores.dim(0), cols = scores.dim(1);
    require(!causal || rows == cols, "causal softmax needs a square matrix");
    std::vector<float> out(scores.numel(), 0.0f);
    auto sv = scores.data();
    for (int r = 0; r < rows; ++r) {
        const int limit = causal ? r + 1 : cols;
        const float* row = sv.data() + static_cast<std::size_t>(r) * cols;
        float* dst = out.data() + static_cast<std::size_t>(r) * cols;
        float mx = row[0];
        for (int c = 1; c < limit; ++c) mx = std::max(mx, row[c]);
        double total = 0.0;
        for (int c = 0; c < limit; ++c) {
            dst[c] = std::exp(row[c] - mx);
            total += dst[c];
        }
        const float inv = static_cast<float>(1.0 / total);
        for (int c = 0; c < limit; ++c) dst[c] *= inv;
    }
    detail::Node* sn = scores.node().get();
    return make_result(scores.shape(), std::move(out), {scores}, [=](detail::Node& self) {
        auto& g = sn->ensure_grad();
        for (int r = 0; r < rows; ++r) {
            const std::size_t base = static_cast<std::size_t>(r) * cols;
            const int limit = causal ? r + 1 : cols;
            double dot = 0.0;
            for (int c = 0; c < limit; ++c) dot += self.grad[base + c] * self.value[base + c];
            for (int c = 0; c < limit; ++c)
                g[base + c] += self.value[base + c] * static_cast<float>(self.grad[base + c] - dot);
        }
    });
}

// ---- spatial --------------------------------------------------------------

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    require(x.rank() == 2 || x.rank() == 3, "resize_bilinear expects {C,H,W} or {H,W}");
    require(out_h > 0 && out_w > 0, "resize_bilinear to empty size");
    const bool planar = x.rank() == 2;
    const int channels = planar ? 1 : x.dim(0);
    const int in_h = planar ? x.dim(0) : x.dim(1);
    const int in_w = planar ? x.dim(1) : x.dim(2);
    require(in_h > 0 && in_w > 0, "resize_bilinear from empty size");
    Shape shape = planar ? Shape{out_h, out_w} : Shape{channels, out_h, out_w};
    if (in_h == out_h && in_w == out_w) {
        return reshape(x, shape);
    }
    const AxisWeights wy = axis_weights(in_h, out_h);
    const AxisWeights wx = axis_weights(in_w, out_w);
    std::vector<float> out(static_cast<std::size_t>(channels) * out_h * out_w);
    std::vector<float> tmp(static_cast<std::size_t>(in_h) * out_w);
    auto xv = x.data();
    for (int c = 0; c < channels; ++c) {
        const float* src = xv.data() + static_cast<std::size_t>(c) * in_h * in_w;
        for (int y = 0; y < in_h; ++y)
            for (int ox = 0; ox < out_w; ++ox)
                tmp[static_cast<std::size_t>(y) * out_w + ox] =
                    wx.w_lo[ox] * src[static_cast<std::size_t>(y) * in_w + wx.lo[ox]] +
                    wx.w_hi[ox] * src[static_cast<std::size_t>(y) * in_w + wx.hi[ox]];
        float* dst = out.data() + static_cast<std::size_t>(c) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox)
                dst[static_cast<std::size_t>(oy) * out_w + ox] =
                    wy.w_lo[oy] * tmp[static_cast<std::size_t>(wy.lo[oy]) * out_w + ox] +
                    wy.w_hi[oy] * tmp[static_cast<std::size_t>(wy.hi[oy]) * out_w + ox];
    }
    detail::Node* xn = x.node().get();
    return make_result(std::move(shape), std::move(out), {x}, [=](detail::Node& self) {
        auto& g = xn->ensure_grad();
        std::vector<float> gtmp(static_cast<std::size_t>(in_h) * out_w);
        for (int c = 0; c < channels; ++c) {
            std::fill(gtmp.begin(), gtmp.end(), 0.0f);
            const float* gout = self.grad.data() + static_cast<std::size_t>(c) * out_h * out_w;
            for (int oy = 0; oy < out_h; ++oy)
                for (int ox = 0; ox < out_w; ++ox) {
                    const float go = gout[static_cast<std::size_t>(oy) * out_w + ox];
                    gtmp[static_cast<std::size_t>(wy.lo[oy]) * out_w + ox] += wy.w_lo[oy] * go;
                    gtmp[static_cast<std::size_t>(wy.hi[oy]) * out_w + ox] += wy.w_hi[oy] * go;
                }
            float* gin = g.data() + static_cast<std::size_t>(c) * in_h * in_w;
            for (int y = 0; y < in_h; ++y)
                for (int ox = 0; ox < out_w; ++ox) {
                    const float gt = gtmp[static_cast<std::size_t>(y) * out_w + ox];
                    gin[static_cast<std::size_t>(y) * in_w + wx.lo[ox]] += wx.w_lo[ox] * gt;
                    gin[static_cast<std::size_t>(y) * in_w + wx.hi[ox]] += wx.w_hi[ox] * gt;
                }
        }
    });
}

Tensor im2col(const Tensor& x, int kernel, int stride, int pad) {
    require(x.rank() == 3, "im2col expects {C,H,W}");
    const int channels = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int out_h = (h + 2 * pad - kernel) / stride + 1;
    const int out_w = (w + 2 * pad - kernel) / stride + 1;
    require(out_h > 0 && out_w > 0, "im2col kernel larger than input " + shape_string(x.shape()));
    const int rows = channels * kernel * kernel;
    const int cols = out_h * out_w;
    std::vector<float> out(static_cast<std::size_t>(rows) * cols, 0.0f);
    // Source index per output cell, -1 for padding.
    std::vector<int> index(out.size(), -1);
    auto xv = x.data();
    for (int c = 0; c < channels; ++c)
        for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx) {
                const int row = (c * kernel + ky) * kernel + kx;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= w) continue;
                        const std::size_t o = static_cast<std::size_t>(row) * cols + oy * out_w + ox;
                        const int src = (c * h + iy) * w + ix;
                        index[o] = src;
                        out[o] = xv[src];
                    }
                }
            }
    detail::Node* xn = x.node().get();
    return make_result({rows, cols}, std::move(out), {x},
                       [=, index = std::move(index)](detail::Node& self) {
                           auto& g = xn->ensure_grad();
                           for (std::size_t o = 0; o < index.size(); ++o)
                               if (index[o] >= 0) g[index[o]] += self.grad[o];
                       });
}

// ---- fused losses ---------------------------------------------------------

Tensor bce_with_logits(const Tensor& logits, std::span<const float> target) {
    require(target.size() == logits.numel(), "bce target size mismatch");
    require(logits.numel() > 0, "bce on empty tensor");
    const std::size_t n = logits.numel();
    auto zv = logits.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = zv[i];
        acc += std::max(z, 0.0) - z * target[i] + std::log1p(std::exp(-std::abs(z)));
    }
    std::vector<float> t(target.begin(), target.end());
    detail::Node* zn = logits.node().get();
    return make_result({1}, {static_cast<float>(acc / static_cast<double>(n))}, {logits},
                       [=, t = std::move(t)](detail::Node& self) {
                           auto& g = zn->ensure_grad();
                           const float scale_factor = self.grad[0] / static_cast<float>(n);
                           for (std::size_t i = 0; i < n; ++i)
                               g[i] += (sigmoid_value(zn->value[i]) - t[i]) * scale_factor;
                       });
}

Tensor dice_from_probs(const Tensor& probs, std::span<const float> target, float eps) {
    require(target.size() == probs.numel(), "dice target size mismatch");
    auto pv = probs.data();
    double inter = 0.0, total = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        inter += static_cast<double>(pv[i]) * target[i];
        total += static_cast<double>(pv[i]) + target[i];
    }
    const double num = 2.0 * inter + eps;
    const double den = total + eps;
    std::vector<float> t(target.begin(), target.end());
    detail::Node* pn = probs.node().get();
    return make_result({1}, {static_cast<float>(1.0 - num / den)}, {probs},
                       [=, t = std::move(t)](detail::Node& self) {
                           auto& g = pn->ensure_grad();
                           const double den2 = den * den;
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               const double d = -(2.0 * t[i] * den - num) / den2;
                               g[i] += static_cast<float>(self.grad[0] * d);
                           }
                       });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets) {
    require(logits.rank() == 2, "cross_entropy_rows expects [rows, classes]");
    const int rows = logits.dim(0), classes = logits.dim(1);
    require(targets.size() == static_cast<std::size_t>(rows), "cross_entropy target count");
    auto lv = logits.data();
    std::vector<float> probs(logits.numel(), 0.0f);
    std::vector<int> t(targets.begin(), targets.end());
    double acc = 0.0;
    int active = 0;
    for (int r = 0; r < rows; ++r) {
        if (t[r] < 0) continue;
        require(t[r] < classes, "cross_entropy target out of range");
        const float* row = lv.data() + static_cast<std::size_t>(r) * classes;
        double mx = row[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, static_cast<double>(row[c]));
        double total = 0.0;
        for (int c = 0; c < classes; ++c) total += std::exp(row[c] - mx);
        const double log_z = mx + std::log(total);
        acc += log_z - row[t[r]];
        for (int c = 0; c < classes; ++c)
            probs[static_cast<std::size_t>(r) * classes + c] =
                static_cast<float>(std::exp(row[c] - log_z));
        ++active;
    }
    const float value = active ? static_cast<float>(acc / active) : 0.0f;
    detail::Node* ln = logits.node().get();
    return make_result({1}, {value}, {logits},
                       [=, probs = std::move(probs), t = std::move(t)](detail::Node& self) {
                           if (!active) return;
                           auto& g = ln->ensure_grad();
                           const float s = self.grad[0] / static_cast<float>(active);
                           for (int r = 0; r < rows; ++r) {
                               if (t[r] < 0) continue;
                               const std::size_t base = static_cast<std::size_t>(r) * classes;
                               for (int c = 0; c < classes; ++c)
                                   g[base + c] += s * (probs[base + c] - (c == t[r] ? 1.0f : 0.0f));
                           }
                       });
}

}  // namespace uavseg
