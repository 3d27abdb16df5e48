#include "uavseg/nn.hpp"

#include <algorithm>
#include <cmath>

#include "uavseg/errors.hpp"

namespace uavseg {

Tensor ParameterStore::add(const std::string& name, Shape shape, std::vector<float> values) {
    if (contains(name)) {
        throw InternalError("duplicate parameter " + name);
    }
    Tensor t = Tensor::parameter(std::move(shape), std::move(values));
    entries_.emplace_back(name, t);
    return t;
}

Tensor ParameterStore::add_uniform(const std::string& name, Shape shape, float bound, Rng& rng) {
    std::uniform_real_distribution<float> dist(-bound, bound);
    std::vector<float> values(shape_numel(shape));
    for (auto& v : values) v = dist(rng);
    return add(name, std::move(shape), std::move(values));
}

Tensor ParameterStore::add_constant(const std::string& name, Shape shape, float value) {
    std::vector<float> values(shape_numel(shape), value);
    return add(name, std::move(shape), std::move(values));
}

const Tensor& ParameterStore::get(const std::string& name) const {
    for (const auto& [n, t] : entries_) {
        if (n == name) return t;
    }
    throw InternalError("unknown parameter " + name);
}

bool ParameterStore::contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const auto& e) { return e.first == name; });
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
    if (other.entries_.size() != entries_.size()) {
        throw InternalError("parameter count mismatch on copy");
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        auto& [name, t] = entries_[i];
        const auto& [oname, ot] = other.entries_[i];
        if (name != oname || t.shape() != ot.shape()) {
            throw InternalError("parameter layout mismatch at " + name);
        }
        std::copy(ot.data().begin(), ot.data().end(), t.mutable_data().begin());
    }
}

Linear Linear::create(ParameterStore& store, const std::string& name, int in, int out,
                      bool with_bias, Rng& rng) {
    Linear l;
    const float bound = std::sqrt(6.0f / static_cast<float>(in + out));
    l.weight = store.add_uniform(name + ".weight", {out, in}, bound, rng);
    if (with_bias) {
        l.bias = store.add_constant(name + ".bias", {out}, 0.0f);
    }
    return l;
}

Tensor Linear::forward(const Tensor& x) const {
    Tensor y = matmul(x, weight, false, true);
    return bias.defined() ? add_trailing(y, bias) : y;
}

Tensor Linear::project_map(const Tensor& map) const {
    if (map.rank() != 3) {
        throw InternalError("project_map expects {C,H,W}, got " + shape_string(map.shape()));
    }
    const int h = map.dim(1), w = map.dim(2);
    Tensor flat = reshape(map, {map.dim(0), h * w});
    Tensor y = matmul(weight, flat);
    if (bias.defined()) y = add_leading(y, bias);
    return reshape(y, {out_features(), h, w});
}

Conv2d Conv2d::create(ParameterStore& store, const std::string& name, int in, int out,
                      int kernel, int stride, int pad, Rng& rng) {
    Conv2d c;
    const int fan_in = in * kernel * kernel;
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in + out));
    c.weight = store.add_uniform(name + ".weight", {out, fan_in}, bound, rng);
    c.bias = store.add_constant(name + ".bias", {out}, 0.0f);
    c.kernel = kernel;
    c.stride = stride;
    c.pad = pad;
    return c;
}

Tensor Conv2d::forward(const Tensor& x) const {
    const int h = x.dim(1), w = x.dim(2);
    const int out_h = (h + 2 * pad - kernel) / stride + 1;
    const int out_w = (w + 2 * pad - kernel) / stride + 1;
    Tensor cols = (kernel == 1 && stride == 1 && pad == 0) ? reshape(x, {x.dim(0), h * w})
                                                            : im2col(x, kernel, stride, pad);
    Tensor y = add_leading(matmul(weight, cols), bias);
    return reshape(y, {out_channels(), out_h, out_w});
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, int width) {
    LayerNorm ln;
    ln.gain = store.add_constant(name + ".gain", {width}, 1.0f);
    ln.bias = store.add_constant(name + ".bias", {width}, 0.0f);
    return ln;
}

}  // namespace uavseg
