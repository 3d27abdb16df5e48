#include "uavseg/encoder.hpp"

#include <cmath>

#include "uavseg/errors.hpp"

namespace uavseg {

std::string_view to_string(FusionDirection direction) {
    switch (direction) {
        case FusionDirection::FineIntoGlobal: return "fine_into_global";
        case FusionDirection::Sum: return "sum";
        case FusionDirection::GlobalIntoFine: return "global_into_fine";
    }
    return "unknown";
}

std::optional<FusionDirection> parse_fusion_direction(std::string_view text) {
    for (auto d : {FusionDirection::FineIntoGlobal, FusionDirection::Sum,
                   FusionDirection::GlobalIntoFine}) {
        if (to_string(d) == text) return d;
    }
    return std::nullopt;
}

void EncoderConfig::validate() const {
    if (global_input_size < 1 || patch_size < 1 || global_input_size % patch_size != 0) {
        throw ConfigError("encoder.global_input_size must be a positive multiple of patch_size");
    }
    if (fine_input_size < global_input_size) {
        throw ConfigError("encoder.fine_input_size must be >= global_input_size");
    }
    if (fine_input_size % FeaturePyramid::kStrides.back() != 0) {
        throw ConfigError("encoder.fine_input_size must be a multiple of 16");
    }
    for (int c : global_channels) {
        if (c < 1) throw ConfigError("encoder.global_channels must be positive");
    }
    for (int c : fine_channels) {
        if (c < 1) throw ConfigError("encoder.fine_channels must be positive");
    }
    for (int s : active_fusion_stages) {
        if (s < 1 || s > 4) {
            throw ConfigError("encoder.active_fusion_stages entries must be in 1..4, got " +
                              std::to_string(s));
        }
    }
}

Tensor ConvStack::forward(const Tensor& x) const {
    Tensor y = x;
    for (const auto& conv : layers) y = gelu(conv.forward(y));
    return y;
}

FeatureMap align(const FeatureMap& source, const FusionStageState& state) {
    Tensor resampled = resize_bilinear(source.values(), state.target_height, state.target_width);
    const int c_in = source.channels();
    if (state.align_weight.dim(1) != c_in) {
        throw InternalError("alignment projection expects " +
                            std::to_string(state.align_weight.dim(1)) + " channels, got " +
                            std::to_string(c_in));
    }
    const int c_out = state.align_weight.dim(0);
    Tensor flat = reshape(resampled, {c_in, state.target_height * state.target_width});
    return FeatureMap(
        reshape(matmul(state.align_weight, flat), {c_out, state.target_height, state.target_width}));
}

FeatureMap align_stage(const FeaturePyramid& pyramid, int stage, const FusionStageState& state) {
    if (stage < 1 || stage > 3) {
        throw InputError("fusion stage must be in 1..3, got " + std::to_string(stage));
    }
    return align(pyramid.levels[state.source_level], state);
}

Tensor gate_activation(const FeatureMap& transformed, const FeatureMap& aligned,
                       const FusionStageState& state) {
    const int c = transformed.channels();
    Tensor pooled = mean_trailing(concat_rows({transformed.values(), aligned.values()}));
    Tensor logits = reshape(matmul(state.gate_weight, reshape(pooled, {2 * c, 1})), {c});
    return sigmoid(add(logits, state.gate_bias));
}

FeatureMap fuse_stage(const FeatureMap& prev, const FeatureMap& aligned,
                      const FusionStageState& state) {
    FeatureMap transformed(state.transform.forward(prev.values()));
    if (transformed.values().shape() != aligned.values().shape()) {
        throw InternalError("fuse_stage shape mismatch " +
                            shape_string(transformed.values().shape()) + " vs " +
                            shape_string(aligned.values().shape()));
    }
    Tensor gate = gate_activation(transformed, aligned, state);
    return FeatureMap(add(transformed.values(), mul_leading(aligned.values(), gate)));
}

FeatureMap final_fuse(const FeatureMap& f3, const FeaturePyramid& pyramid,
                      const OutputFusion& params, bool active) {
    const int c = params.global_weight.dim(0);
    const int h = f3.height(), w = f3.width();
    Tensor out = matmul(params.global_weight, reshape(f3.values(), {f3.channels(), h * w}));
    if (active) {
        const FeatureMap& coarsest = pyramid.levels.back();
        Tensor resampled = resize_bilinear(coarsest.values(), h, w);
        Tensor fine = matmul(params.fine_weight, reshape(resampled, {coarsest.channels(), h * w}));
        out = add(out, fine);
    }
    FeatureMap result(reshape(out, {c, h, w}));
    if (result.values().shape() != f3.values().shape()) {
        throw InternalError("final_fuse changed the token shape");
    }
    return result;
}

DualPathEncoder::DualPathEncoder(EncoderConfig config, ParameterStore& store, Rng& rng,
                                 const std::string& prefix)
    : config_(std::move(config)) {
    config_.validate();
    const auto& gc = config_.global_channels;
    const auto& fc = config_.fine_channels;
    const int grid = config_.token_grid();
    const int fine_in = config_.coordinate_channels ? 5 : 3;

    patch_embed_ = Conv2d::create(store, prefix + ".patch_embed", 3, gc[0], config_.patch_size,
                                  config_.patch_size, 0, rng);

    // Fine path: stride-4 stem + 3x3, then two stride-2 downsamplers.
    reverse_stages_[0].transform.layers = {
        Conv2d::create(store, prefix + ".fine1.stem", fine_in, fc[0], 4, 4, 0, rng),
        Conv2d::create(store, prefix + ".fine1.refine", fc[0], fc[0], 3, 1, 1, rng)};
    reverse_stages_[1].transform.layers = {
        Conv2d::create(store, prefix + ".fine2.down", fc[0], fc[1], 2, 2, 0, rng)};
    reverse_stages_[2].transform.layers = {
        Conv2d::create(store, prefix + ".fine3.down", fc[1], fc[2], 2, 2, 0, rng)};

    for (int k = 1; k <= 3; ++k) {
        FusionStageState& s = stages_[k - 1];
        const std::string name = prefix + ".stage" + std::to_string(k);
        s.stage = k;
        s.source_level = k - 1;
        s.target_height = grid;
        s.target_width = grid;
        s.transform.layers = {Conv2d::create(store, name + ".transform", gc[k - 1], gc[k], 3, 1, 1, rng)};
        if (config_.fusion_direction == FusionDirection::FineIntoGlobal) {
            const float bound = std::sqrt(6.0f / static_cast<float>(fc[k - 1] + gc[k]));
            s.align_weight = store.add_uniform(name + ".align.weight", {gc[k], fc[k - 1]}, bound, rng);
            const float gbound = std::sqrt(6.0f / static_cast<float>(3 * gc[k]));
            s.gate_weight = store.add_uniform(name + ".gate.weight", {gc[k], 2 * gc[k]}, gbound, rng);
            s.gate_bias = store.add_constant(name + ".gate.bias", {gc[k]}, 0.0f);
        }

        FusionStageState& r = reverse_stages_[k - 1];
        r.stage = k;
        r.source_level = k - 1;
        r.target_height = config_.level_size(k - 1);
        r.target_width = config_.level_size(k - 1);
        if (config_.fusion_direction == FusionDirection::GlobalIntoFine) {
            const std::string rname = prefix + ".fine" + std::to_string(k);
            const float bound = std::sqrt(6.0f / static_cast<float>(fc[k - 1] + gc[k]));
            r.align_weight = store.add_uniform(rname + ".align.weight", {fc[k - 1], gc[k]}, bound, rng);
            const float gbound = std::sqrt(6.0f / static_cast<float>(3 * fc[k - 1]));
            r.gate_weight =
                store.add_uniform(rname + ".gate.weight", {fc[k - 1], 2 * fc[k - 1]}, gbound, rng);
            r.gate_bias = store.add_constant(rname + ".gate.bias", {fc[k - 1]}, 0.0f);
        }
    }

    const float wb = std::sqrt(6.0f / static_cast<float>(2 * gc[3]));
    output_.global_weight = store.add_uniform(prefix + ".output.global.weight", {gc[3], gc[3]}, wb, rng);
    const float sb = std::sqrt(6.0f / static_cast<float>(gc[3] + fc[2]));
    output_.fine_weight = store.add_uniform(prefix + ".output.fine.weight", {gc[3], fc[2]}, sb, rng);
}

PreparedImage DualPathEncoder::prepare(const Image& image) const {
    image.validate();
    NoGradGuard no_grad;
    Tensor pixels = image.to_tensor();
    PreparedImage out;
    out.global_input = resize_bilinear(pixels, config_.global_input_size, config_.global_input_size);
    Tensor fine = resize_bilinear(pixels, config_.fine_input_size, config_.fine_input_size);
    if (config_.coordinate_channels) {
        const int s = config_.fine_input_size;
        std::vector<float> coords(2 * static_cast<std::size_t>(s) * s);
        for (int y = 0; y < s; ++y) {
            for (int x = 0; x < s; ++x) {
                coords[static_cast<std::size_t>(y) * s + x] = (x + 0.5f) / static_cast<float>(s);
                coords[static_cast<std::size_t>(s) * s + static_cast<std::size_t>(y) * s + x] =
                    (y + 0.5f) / static_cast<float>(s);
            }
        }
        fine = concat_rows({fine, Tensor::from({2, s, s}, std::move(coords))});
    }
    out.fine_input = fine;
    return out;
}

DualFeatures DualPathEncoder::extract_dual(const PreparedImage& input) const {
    DualFeatures out;
    out.global = FeatureMap(patch_embed_.forward(input.global_input));
    Tensor level = input.fine_input;
    for (int l = 0; l < 3; ++l) {
        level = reverse_stages_[l].transform.forward(level);
        out.pyramid.levels[l] = FeatureMap(level);
    }
    out.pyramid.validate();
    return out;
}

EncodedImage DualPathEncoder::encode(const PreparedImage& input) const {
    DualFeatures dual = extract_dual(input);
    EncodedImage out;
    out.pyramid = dual.pyramid;
    FeatureMap latent = dual.global;
    bool output_fusion = config_.stage_active(4);

    switch (config_.fusion_direction) {
        case FusionDirection::FineIntoGlobal:
            for (int k = 1; k <= 3; ++k) {
                const FusionStageState& s = stages_[k - 1];
                latent = config_.stage_active(k)
                             ? fuse_stage(latent, align_stage(dual.pyramid, k, s), s)
                             : FeatureMap(s.transform.forward(latent.values()));
            }
            break;
        case FusionDirection::Sum:
            for (const auto& s : stages_) latent = FeatureMap(s.transform.forward(latent.values()));
            output_fusion = true;
            break;
        case FusionDirection::GlobalIntoFine: {
            std::array<FeatureMap, 3> latents;
            for (int k = 0; k < 3; ++k) {
                latent = FeatureMap(stages_[k].transform.forward(latent.values()));
                latents[k] = latent;
            }
            FeatureMap level(input.fine_input);
            for (int k = 1; k <= 3; ++k) {
                const FusionStageState& r = reverse_stages_[k - 1];
                level = config_.stage_active(k)
                            ? fuse_stage(level, align(latents[k - 1], r), r)
                            : FeatureMap(r.transform.forward(level.values()));
                out.pyramid.levels[k - 1] = level;
            }
            out.pyramid.validate();
            break;
        }
    }
    out.tokens = final_fuse(latent, out.pyramid, output_, output_fusion);
    return out;
}

}  // namespace uavseg
