#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "uavseg/tensor.hpp"

namespace uavseg {

/// RGB image, planar CHW float storage with values in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // 3 * height * width

    static Image zeros(int height, int width);
    float& at(int channel, int y, int x) {
        return pixels[(static_cast<std::size_t>(channel) * height + y) * width + x];
    }
    float at(int channel, int y, int x) const {
        return pixels[(static_cast<std::size_t>(channel) * height + y) * width + x];
    }
    /// Throws InputError on empty size, wrong storage size or non-finite pixels.
    void validate() const;
    Tensor to_tensor() const;
};

/// Row-major binary mask; every entry is 0 or 1.
struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;

    static BinaryMask zeros(int height, int width);
    std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::size_t area() const;
    std::size_t size() const { return bits.size(); }
    bool same_shape(const BinaryMask& other) const {
        return height == other.height && width == other.width;
    }
    std::vector<float> as_floats() const;
    bool operator==(const BinaryMask&) const = default;
};

/// channels x height x width activations.
class FeatureMap {
public:
    FeatureMap() = default;
    /// Wraps a {C,H,W} tensor; throws InternalError on rank or size breach.
    explicit FeatureMap(Tensor values);

    const Tensor& values() const { return values_; }
    int channels() const { return values_.dim(0); }
    int height() const { return values_.dim(1); }
    int width() const { return values_.dim(2); }
    int tokens() const { return height() * width(); }
    bool all_finite() const;

private:
    Tensor values_;
};

/// Structural pyramid, finest first: strides 4, 8, 16 of the fine-path input.
struct FeaturePyramid {
    static constexpr std::array<int, 3> kStrides{4, 8, 16};
    std::array<FeatureMap, 3> levels;

    /// Checks the halving invariant between consecutive levels.
    void validate() const;
};

/// Pre-sigmoid per-pixel mask scores.
class MaskLogits {
public:
    MaskLogits() = default;
    explicit MaskLogits(Tensor values);

    const Tensor& values() const { return values_; }
    int height() const { return values_.dim(0); }
    int width() const { return values_.dim(1); }
    /// sigmoid(z) >= 0.5, i.e. z >= 0.
    BinaryMask binarize() const;

private:
    Tensor values_;
};

enum class ReasoningType { Spatial, Attribute, Scene };

inline constexpr std::array<ReasoningType, 3> kReasoningTypes{
    ReasoningType::Spatial, ReasoningType::Attribute, ReasoningType::Scene};

std::string_view to_string(ReasoningType type);
std::optional<ReasoningType> parse_reasoning_type(std::string_view text);

}  // namespace uavseg
