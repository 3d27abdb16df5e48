#include "uavseg/decoder.hpp"

#include "uavseg/errors.hpp"

namespace uavseg {

void DecoderConfig::validate() const {
    if (depth < 1 || depth > 3) {
        throw ConfigError("decoder.depth must be 1, 2 or 3 (got " + std::to_string(depth) + ")");
    }
    if (embedding_dim < 1) throw ConfigError("decoder.embedding_dim must be >= 1");
    if (output_height < 0 || output_width < 0) throw ConfigError("decoder output size must be >= 0");
}

MaskLogits compute_level_mask(const FeatureMap& features, const Tensor& embedding) {
    const int c = features.channels();
    if (embedding.numel() != static_cast<std::size_t>(c)) {
        throw InternalError("mask embedding has " + std::to_string(embedding.numel()) +
                            " dims but the feature map has " + std::to_string(c) + " channels");
    }
    const int h = features.height(), w = features.width();
    Tensor logits = matmul(reshape(embedding, {1, c}), reshape(features.values(), {c, h * w}));
    return MaskLogits(reshape(logits, {h, w}));
}

FeatureMap modulate_features(const FeatureMap& features, const MaskLogits& above) {
    Tensor resized = resize_bilinear(above.values(), features.height(), features.width());
    Tensor multiplier = add_scalar(sigmoid(resized), 1.0f);
    return FeatureMap(mul_trailing(features.values(), multiplier));
}

MaskLogits fuse_level_masks(const std::vector<MaskLogits>& masks, const Tensor& gamma, int out_h,
                            int out_w) {
    if (masks.empty()) {
        throw InputError("fuse_level_masks needs at least one mask");
    }
    if (gamma.numel() != masks.size()) {
        throw InternalError("gamma has " + std::to_string(gamma.numel()) + " entries for " +
                            std::to_string(masks.size()) + " masks");
    }
    Tensor fused;
    for (std::size_t l = 0; l < masks.size(); ++l) {
        Tensor up = resize_bilinear(masks[l].values(), out_h, out_w);
        Tensor term = mul_scalar(up, slice_rows(gamma, static_cast<int>(l), 1));
        fused = fused.defined() ? add(fused, term) : term;
    }
    return MaskLogits(fused);
}

HierarchicalDecoder::HierarchicalDecoder(DecoderConfig config,
                                         const std::array<int, 3>& pyramid_channels,
                                         ParameterStore& store, Rng& rng, const std::string& prefix)
    : config_(config) {
    config_.validate();
    for (int l = 0; l < 3; ++l) {
        projections_[l] = Linear::create(store, prefix + ".level" + std::to_string(l + 1) + ".proj",
                                         pyramid_channels[l], config_.embedding_dim, false, rng);
    }
    gamma_ = store.add_constant(prefix + ".gamma", {config_.depth},
                                1.0f / static_cast<float>(config_.depth));
}

FeatureMap HierarchicalDecoder::project_level(const FeaturePyramid& pyramid, int level) const {
    return FeatureMap(projections_.at(level).project_map(pyramid.levels.at(level).values()));
}

DecodeResult HierarchicalDecoder::decode(const FeaturePyramid& pyramid, const Tensor& embedding,
                                         int out_h, int out_w) const {
    const int n = config_.depth;
    if (n > static_cast<int>(pyramid.levels.size())) {
        throw ConfigError("decoder depth exceeds pyramid levels");
    }
    if (out_h < 1 || out_w < 1) {
        throw InputError("decode output size must be positive");
    }
    const int coarsest = static_cast<int>(pyramid.levels.size()) - 1;
    const int finest = coarsest - n + 1;

    // Coarse to fine; the coarsest consumed level has no mask above it.
    std::vector<MaskLogits> coarse_first;
    MaskLogits above = compute_level_mask(project_level(pyramid, coarsest), embedding);
    coarse_first.push_back(above);
    for (int level = coarsest - 1; level >= finest; --level) {
        FeatureMap modulated = modulate_features(project_level(pyramid, level), above);
        above = compute_level_mask(modulated, embedding);
        coarse_first.push_back(above);
    }

    DecodeResult result;
    result.per_level.assign(coarse_first.rbegin(), coarse_first.rend());
    result.fused = fuse_level_masks(result.per_level, gamma_, out_h, out_w);
    return result;
}

}  // namespace uavseg
