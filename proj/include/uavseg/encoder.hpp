#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "uavseg/nn.hpp"
#include "uavseg/types.hpp"

namespace uavseg {

enum class FusionDirection {
    FineIntoGlobal,  // structural pyramid injected into the semantic path
    Sum,             // output-level sum only
    GlobalIntoFine,  // semantic latents injected into the structural path
};

std::string_view to_string(FusionDirection direction);
std::optional<FusionDirection> parse_fusion_direction(std::string_view text);

struct EncoderConfig {
    int global_input_size = 64;
    int patch_size = 8;
    int fine_input_size = 256;
    /// Semantic-path channels after the patch stem and after stages 1..3.
    std::array<int, 4> global_channels{32, 48, 64, 64};
    /// Structural pyramid channels at strides 4, 8, 16.
    std::array<int, 3> fine_channels{16, 32, 64};
    /// Stages 1..3 are latent fusions, stage 4 is the output-level fusion.
    std::set<int> active_fusion_stages{1, 2, 3, 4};
    FusionDirection fusion_direction = FusionDirection::FineIntoGlobal;
    /// Appends normalized x/y planes to the fine-path input.
    bool coordinate_channels = true;
    std::uint64_t seed = 0;

    void validate() const;
    int token_grid() const { return global_input_size / patch_size; }
    int token_count() const { return token_grid() * token_grid(); }
    int level_size(int level) const { return fine_input_size / FeaturePyramid::kStrides[level]; }
    bool stage_active(int stage) const { return active_fusion_stages.count(stage) > 0; }
    int output_channels() const { return global_channels[3]; }
};

/// Convolutions, each followed by GELU.
struct ConvStack {
    std::vector<Conv2d> layers;
    Tensor forward(const Tensor& x) const;
};

/// Parameters of one gated fusion stage: B_k, the alignment A_k and the gate G_k.
struct FusionStageState {
    int stage = 1;
    /// Pyramid level read by align_stage (0 = finest).
    int source_level = 0;
    int target_height = 1;
    int target_width = 1;
    ConvStack transform;
    Tensor align_weight;  // [C_target, C_source]
    Tensor gate_weight;   // [C, 2C]
    Tensor gate_bias;     // [C]
};

struct OutputFusion {
    Tensor global_weight;  // W_f: [C3, C3]
    Tensor fine_weight;    // W_s: [C3, C_coarsest]
};

/// Resized encoder inputs; independent of parameters, so they can be cached.
struct PreparedImage {
    Tensor global_input;  // {3, G, G}
    Tensor fine_input;    // {3 (+2), S, S}
};

struct DualFeatures {
    FeatureMap global;
    FeaturePyramid pyramid;
};

struct EncodedImage {
    FeatureMap tokens;
    FeaturePyramid pyramid;
};

/// Bilinear resampling to the state's target size, then channel projection.
FeatureMap align(const FeatureMap& source, const FusionStageState& state);
FeatureMap align_stage(const FeaturePyramid& pyramid, int stage, const FusionStageState& state);
/// Channel-wise gate in (0,1) from the pooled concatenation of both inputs.
Tensor gate_activation(const FeatureMap& transformed, const FeatureMap& aligned,
                       const FusionStageState& state);
/// B_k(prev) + G_k(B_k(prev), aligned) * aligned
FeatureMap fuse_stage(const FeatureMap& prev, const FeatureMap& aligned,
                      const FusionStageState& state);
/// W_f f3 + W_s A_o(coarsest level); only W_f f3 when `active` is false.
FeatureMap final_fuse(const FeatureMap& f3, const FeaturePyramid& pyramid,
                      const OutputFusion& params, bool active);

class DualPathEncoder {
public:
    DualPathEncoder(EncoderConfig config, ParameterStore& store, Rng& rng,
                    const std::string& prefix = "encoder");

    const EncoderConfig& config() const { return config_; }

    PreparedImage prepare(const Image& image) const;
    DualFeatures extract_dual(const Image& image) const { return extract_dual(prepare(image)); }
    DualFeatures extract_dual(const PreparedImage& input) const;
    EncodedImage encode(const Image& image) const { return encode(prepare(image)); }
    EncodedImage encode(const PreparedImage& input) const;

    FusionStageState& stage(int k) { return stages_.at(k - 1); }
    const FusionStageState& stage(int k) const { return stages_.at(k - 1); }
    /// Fine-path stages used by FusionDirection::GlobalIntoFine.
    FusionStageState& reverse_stage(int k) { return reverse_stages_.at(k - 1); }
    OutputFusion& output_fusion() { return output_; }
    const OutputFusion& output_fusion() const { return output_; }

private:
    EncoderConfig config_;
    Conv2d patch_embed_;
    std::array<FusionStageState, 3> stages_;
    std::array<FusionStageState, 3> reverse_stages_;
    OutputFusion output_;
};

}  // namespace uavseg
