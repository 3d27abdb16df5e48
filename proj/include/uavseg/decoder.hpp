#pragma once

#include <array>
#include <string>
#include <vector>

#include "uavseg/nn.hpp"
#include "uavseg/types.hpp"

namespace uavseg {

struct DecoderConfig {
    /// Number of pyramid levels consumed, deepest first.
    int depth = 3;
    /// Mask-embedding width; every consumed level is projected to it.
    int embedding_dim = 64;
    /// Output mask size; 0 means "use the target/image size".
    int output_height = 0;
    int output_width = 0;

    void validate() const;
};

/// Per-pixel dot product <e, F[:, i, j]>.
MaskLogits compute_level_mask(const FeatureMap& features, const Tensor& embedding);
/// F * (sigmoid(M_above) + 1), with M_above bilinearly resampled to F's size.
FeatureMap modulate_features(const FeatureMap& features, const MaskLogits& above);
/// sum_l gamma[l] * upsample(M^l). masks[0] pairs with gamma[0].
MaskLogits fuse_level_masks(const std::vector<MaskLogits>& masks, const Tensor& gamma,
                            int out_h, int out_w);

struct DecodeResult {
    MaskLogits fused;
    /// Finest consumed level first (M^1 ... M^n), each at its native size.
    std::vector<MaskLogits> per_level;
};

class HierarchicalDecoder {
public:
    HierarchicalDecoder(DecoderConfig config, const std::array<int, 3>& pyramid_channels,
                        ParameterStore& store, Rng& rng, const std::string& prefix = "decoder");

    const DecoderConfig& config() const { return config_; }

    /// Projected level `level` (0 = finest) of the pyramid.
    FeatureMap project_level(const FeaturePyramid& pyramid, int level) const;
    DecodeResult decode(const FeaturePyramid& pyramid, const Tensor& embedding, int out_h,
                        int out_w) const;

    Tensor& gamma() { return gamma_; }
    const Tensor& gamma() const { return gamma_; }
    Linear& projection(int level) { return projections_.at(level); }

private:
    DecoderConfig config_;
    std::array<Linear, 3> projections_;
    Tensor gamma_;
};

}  // namespace uavseg
