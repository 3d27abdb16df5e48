#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "uavseg/tensor.hpp"

namespace uavseg {

using Rng = std::mt19937_64;

/// Ordered, named collection of trainable leaves. Order is registration order
/// and is the order parameters are written to checkpoints.
class ParameterStore {
public:
    Tensor add(const std::string& name, Shape shape, std::vector<float> values);
    Tensor add_uniform(const std::string& name, Shape shape, float bound, Rng& rng);
    Tensor add_constant(const std::string& name, Shape shape, float value);

    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const;

    void zero_grad();
    /// Overwrites values of every parameter from `other`; names and shapes must match.
    void copy_values_from(const ParameterStore& other);

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

struct Linear {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out] or undefined

    static Linear create(ParameterStore& store, const std::string& name, int in, int out,
                         bool with_bias, Rng& rng);
    /// x: [rows, in] -> [rows, out]
    Tensor forward(const Tensor& x) const;
    /// Channel projection of a {C,H,W} map: {in,H,W} -> {out,H,W}.
    Tensor project_map(const Tensor& map) const;
    int in_features() const { return weight.dim(1); }
    int out_features() const { return weight.dim(0); }
};

struct Conv2d {
    Tensor weight;  // [out, in*k*k]
    Tensor bias;    // [out]
    int kernel = 1;
    int stride = 1;
    int pad = 0;

    static Conv2d create(ParameterStore& store, const std::string& name, int in, int out,
                         int kernel, int stride, int pad, Rng& rng);
    /// {C,H,W} -> {out,Ho,Wo}
    Tensor forward(const Tensor& x) const;
    int out_channels() const { return weight.dim(0); }
};

struct LayerNorm {
    Tensor gain;
    Tensor bias;

    static LayerNorm create(ParameterStore& store, const std::string& name, int width);
    Tensor forward(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

}  // namespace uavseg
