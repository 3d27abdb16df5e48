#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "uavseg/data.hpp"

namespace uavseg {

enum class ObjectKind { Circle, Square, Triangle };

inline constexpr std::array<std::string_view, 3> kShapeNames{"circle", "square", "triangle"};
inline constexpr std::array<std::string_view, 7> kColorNames{"red",    "blue",   "yellow", "white",
                                                             "purple", "orange", "cyan"};

/// One procedurally placed object. Geometry is in pixel units with pixel (x, y)
/// covering [x, x+1) x [y, y+1); rasterization samples pixel centers.
struct SceneObject {
    ObjectKind kind = ObjectKind::Circle;
    int color = 0;  // index into kColorNames
    double cx = 0.0;
    double cy = 0.0;
    double radius = 1.0;  // bounding radius

    bool contains(double x, double y) const;
    BinaryMask rasterize(int height, int width) const;
    std::string description() const;
};

struct SynthesizedSample {
    ReasoningSample record;
    Image image;
    BinaryMask mask;
    std::vector<SceneObject> objects;
    std::size_t target = 0;
    std::string selector;
};

struct SynthOptions {
    int count = 64;
    std::uint64_t seed = 0;
    int canvas_size = 128;
};

/// In-memory scenes: 3-10 non-overlapping objects on a textured background, one
/// target chosen by a selector of the sample's reasoning type. Types cycle
/// spatial, attribute, scene so each gets at most ceil(n/3) samples.
std::vector<SynthesizedSample> synthesize_samples(const SynthOptions& options);

/// Writes images/, masks/ (PNG + RLE sidecar), records.jsonl and manifest.json
/// under `root`; the manifest split uses the same seed.
std::vector<SynthesizedSample> synthesize_dataset(const SynthOptions& options,
                                                  const std::filesystem::path& root);

}  // namespace uavseg
