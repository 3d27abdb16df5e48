#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uavseg/types.hpp"

namespace uavseg {

struct IouResult {
    double iou = 0.0;
    std::uint64_t intersection = 0;
    std::uint64_t union_count = 0;
};

/// |P & T| / |P | T|; two empty masks score 1. Throws InputError on shape
/// mismatch or non-binary values.
IouResult iou(const BinaryMask& pred, const BinaryMask& target);

/// Running gIoU/cIoU sums per reasoning type.
class MetricAccumulator {
public:
    struct Bucket {
        std::vector<double> ious;
        std::uint64_t intersection = 0;
        std::uint64_t union_count = 0;
    };

    void add(ReasoningType type, const IouResult& result);
    IouResult add(ReasoningType type, const BinaryMask& pred, const BinaryMask& target);

    const Bucket& bucket(ReasoningType type) const { return buckets_[index(type)]; }
    std::size_t count(ReasoningType type) const { return bucket(type).ious.size(); }
    std::size_t count() const;

    friend MetricAccumulator merge(const MetricAccumulator& a, const MetricAccumulator& b);

private:
    static std::size_t index(ReasoningType type) { return static_cast<std::size_t>(type); }
    std::array<Bucket, 3> buckets_;
};

MetricAccumulator merge(const MetricAccumulator& a, const MetricAccumulator& b);

/// Mean per-image IoU. Throws InputError("no samples") when empty.
double giou(const MetricAccumulator& acc);
double giou(const MetricAccumulator& acc, ReasoningType type);
/// Total intersection over total union; 1 when every mask in the set is empty.
double ciou(const MetricAccumulator& acc);
double ciou(const MetricAccumulator& acc, ReasoningType type);

enum class MiscoverageBase {
    Predicted,   // |P \ T| / |P|
    Background,  // |P \ T| / |image \ T|
};

struct AlignmentCheck {
    double coverage = 0.0;
    double miscoverage = 0.0;
    bool aligned = false;
};

/// coverage = |P & T| / |T|, aligned iff coverage >= 0.95 and miscoverage <= 0.05.
AlignmentCheck mask_alignment_check(const BinaryMask& pred, const BinaryMask& reference,
                                    MiscoverageBase base = MiscoverageBase::Predicted);

/// One line of a results table.
struct MetricRow {
    std::string setting;
    std::string model;
    MetricAccumulator metrics;
};

/// Columns: setting, model, then gIoU/cIoU for attribute, scene, spatial.
/// Fractions with six decimals; types absent from a row print "n/a".
std::string render_csv(const std::vector<MetricRow>& rows);
/// Same layout as a Markdown table, scores in percent with two decimals.
std::string render_markdown(const std::vector<MetricRow>& rows);

}  // namespace uavseg
