#include "uavseg/types.hpp"

#include <algorithm>
#include <cmath>

#include "uavseg/errors.hpp"

namespace uavseg {

Image Image::zeros(int height, int width) {
    Image img;
    img.height = height;
    img.width = width;
    img.pixels.assign(3 * static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0), 0.0f);
    return img;
}

void Image::validate() const {
    if (height <= 0 || width <= 0) {
        throw InputError("image has zero size");
    }
    if (pixels.size() != 3 * static_cast<std::size_t>(height) * width) {
        throw InputError("image storage does not match 3x" + std::to_string(height) + "x" +
                         std::to_string(width));
    }
    for (float v : pixels) {
        if (!std::isfinite(v)) {
            throw InputError("image contains non-finite pixels");
        }
        if (v < 0.0f || v > 1.0f) {
            throw InputError("image pixel outside [0,1]");
        }
    }
}

Tensor Image::to_tensor() const { return Tensor::from({3, height, width}, pixels); }

BinaryMask BinaryMask::zeros(int height, int width) {
    BinaryMask m;
    m.height = height;
    m.width = width;
    m.bits.assign(static_cast<std::size_t>(height) * width, 0);
    return m;
}

std::size_t BinaryMask::area() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

std::vector<float> BinaryMask::as_floats() const {
    return std::vector<float>(bits.begin(), bits.end());
}

FeatureMap::FeatureMap(Tensor values) : values_(std::move(values)) {
    if (!values_.defined() || values_.rank() != 3) {
        throw InternalError("FeatureMap needs a {C,H,W} tensor");
    }
    if (values_.dim(0) < 1 || values_.dim(1) < 1 || values_.dim(2) < 1) {
        throw InternalError("FeatureMap dimensions must be >= 1, got " +
                            shape_string(values_.shape()));
    }
}

bool FeatureMap::all_finite() const {
    const auto v = values_.data();
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

void FeaturePyramid::validate() const {
    for (std::size_t l = 0; l + 1 < levels.size(); ++l) {
        if (levels[l + 1].height() != levels[l].height() / 2 ||
            levels[l + 1].width() != levels[l].width() / 2) {
            throw InternalError("pyramid level " + std::to_string(l + 1) +
                                " is not half of level " + std::to_string(l));
        }
    }
}

MaskLogits::MaskLogits(Tensor values) : values_(std::move(values)) {
    if (!values_.defined() || values_.rank() != 2) {
        throw InternalError("MaskLogits needs an {H,W} tensor");
    }
}

BinaryMask MaskLogits::binarize() const {
    BinaryMask m = BinaryMask::zeros(height(), width());
    const auto v = values_.data();
    for (std::size_t i = 0; i < v.size(); ++i) m.bits[i] = v[i] >= 0.0f ? 1 : 0;
    return m;
}

std::string_view to_string(ReasoningType type) {
    switch (type) {
        case ReasoningType::Spatial: return "spatial";
        case ReasoningType::Attribute: return "attribute";
        case ReasoningType::Scene: return "scene";
    }
    return "unknown";
}

std::optional<ReasoningType> parse_reasoning_type(std::string_view text) {
    for (ReasoningType t : kReasoningTypes) {
        if (to_string(t) == text) return t;
    }
    return std::nullopt;
}

}  // namespace uavseg
