#include "uavseg/metrics.hpp"

#include <cstdio>
#include <numeric>
#include <sstream>

#include "uavseg/errors.hpp"

namespace uavseg {

namespace {

void check_pair(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_shape(b) || a.bits.size() != b.bits.size()) {
        throw InputError("mask shapes differ: " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                         std::to_string(b.width));
    }
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        if (a.bits[i] > 1 || b.bits[i] > 1) throw InputError("mask values must be 0 or 1");
    }
}

double mean_of(const std::vector<double>& values) {
    if (values.empty()) throw InputError("no samples");
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double ratio(std::uint64_t intersection, std::uint64_t union_count, std::size_t samples) {
    if (samples == 0) throw InputError("no samples");
    if (union_count == 0) return 1.0;
    return static_cast<double>(intersection) / static_cast<double>(union_count);
}

// Table column order: attribute, scene, spatial.
constexpr std::array<ReasoningType, 3> kColumnOrder{ReasoningType::Attribute, ReasoningType::Scene,
                                                    ReasoningType::Spatial};

std::string format_value(double v, bool percent) {
    char buf[32];
    if (percent) {
        std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
    } else {
        std::snprintf(buf, sizeof buf, "%.6f", v);
    }
    return buf;
}

std::vector<std::string> row_cells(const MetricRow& row, bool percent) {
    std::vector<std::string> cells{row.setting, row.model};
    for (ReasoningType t : kColumnOrder) {
        if (row.metrics.count(t) == 0) {
            cells.emplace_back("n/a");
            cells.emplace_back("n/a");
        } else {
            cells.push_back(format_value(giou(row.metrics, t), percent));
            cells.push_back(format_value(ciou(row.metrics, t), percent));
        }
    }
    return cells;
}

const std::vector<std::string>& header_cells() {
    static const std::vector<std::string> header{
        "setting",        "model",          "attribute_giou", "attribute_ciou",
        "scene_giou",     "scene_ciou",     "spatial_giou",   "spatial_ciou"};
    return header;
}

}  // namespace

IouResult iou(const BinaryMask& pred, const BinaryMask& target) {
    check_pair(pred, target);
    IouResult r;
    for (std::size_t i = 0; i < pred.bits.size(); ++i) {
        r.intersection += pred.bits[i] & target.bits[i];
        r.union_count += pred.bits[i] | target.bits[i];
    }
    r.iou = r.union_count == 0 ? 1.0
                               : static_cast<double>(r.intersection) /
                                     static_cast<double>(r.union_count);
    return r;
}

void MetricAccumulator::add(ReasoningType type, const IouResult& result) {
    if (result.intersection > result.union_count) {
        throw InputError("intersection exceeds union");
    }
    Bucket& b = buckets_[index(type)];
    b.ious.push_back(result.iou);
    b.intersection += result.intersection;
    b.union_count += result.union_count;
}

IouResult MetricAccumulator::add(ReasoningType type, const BinaryMask& pred,
                                 const BinaryMask& target) {
    IouResult r = iou(pred, target);
    add(type, r);
    return r;
}

std::size_t MetricAccumulator::count() const {
    std::size_t n = 0;
    for (const auto& b : buckets_) n += b.ious.size();
    return n;
}

MetricAccumulator merge(const MetricAccumulator& a, const MetricAccumulator& b) {
    MetricAccumulator out = a;
    for (std::size_t i = 0; i < out.buckets_.size(); ++i) {
        auto& dst = out.buckets_[i];
        const auto& src = b.buckets_[i];
        dst.ious.insert(dst.ious.end(), src.ious.begin(), src.ious.end());
        dst.intersection += src.intersection;
        dst.union_count += src.union_count;
    }
    return out;
}

double giou(const MetricAccumulator& acc) {
    std::vector<double> all;
    for (ReasoningType t : kReasoningTypes) {
        const auto& ious = acc.bucket(t).ious;
        all.insert(all.end(), ious.begin(), ious.end());
    }
    return mean_of(all);
}

double giou(const MetricAccumulator& acc, ReasoningType type) { return mean_of(acc.bucket(type).ious); }

double ciou(const MetricAccumulator& acc) {
    std::uint64_t inter = 0, uni = 0;
    for (ReasoningType t : kReasoningTypes) {
        inter += acc.bucket(t).intersection;
        uni += acc.bucket(t).union_count;
    }
    return ratio(inter, uni, acc.count());
}

double ciou(const MetricAccumulator& acc, ReasoningType type) {
    const auto& b = acc.bucket(type);
    return ratio(b.intersection, b.union_count, b.ious.size());
}

AlignmentCheck mask_alignment_check(const BinaryMask& pred, const BinaryMask& reference,
                                    MiscoverageBase base) {
    check_pair(pred, reference);
    std::uint64_t ref_area = 0, pred_area = 0, inter = 0;
    for (std::size_t i = 0; i < pred.bits.size(); ++i) {
        ref_area += reference.bits[i];
        pred_area += pred.bits[i];
        inter += pred.bits[i] & reference.bits[i];
    }
    if (ref_area == 0) {
        throw InputError("reference mask is empty; coverage is undefined");
    }
    const std::uint64_t spill = pred_area - inter;
    const std::uint64_t spill_base =
        base == MiscoverageBase::Predicted ? pred_area : pred.bits.size() - ref_area;

    AlignmentCheck out;
    out.coverage = static_cast<double>(inter) / static_cast<double>(ref_area);
    out.miscoverage = spill_base == 0 ? 0.0 : static_cast<double>(spill) / static_cast<double>(spill_base);
    // Integer comparisons keep the 95% / 5% boundaries inclusive and exact.
    const bool covered = 100 * inter >= 95 * ref_area;
    const bool contained = 100 * spill <= 5 * spill_base;
    out.aligned = covered && contained;
    return out;
}

std::string render_csv(const std::vector<MetricRow>& rows) {
    std::ostringstream out;
    const auto& header = header_cells();
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    for (const auto& row : rows) {
        const auto cells = row_cells(row, false);
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
        out << '\n';
    }
    return out.str();
}

std::string render_markdown(const std::vector<MetricRow>& rows) {
    std::ostringstream out;
    out << "| Setting | Model | Attribute gIoU | Attribute cIoU | Scene gIoU | Scene cIoU | "
           "Spatial gIoU | Spatial cIoU |\n";
    out << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& row : rows) {
        out << '|';
        for (const auto& cell : row_cells(row, true)) out << ' ' << cell << " |";
        out << '\n';
    }
    return out.str();
}

}  // namespace uavseg
