#include "uavseg/losses.hpp"

#include <algorithm>
#include <cmath>

#include "uavseg/errors.hpp"

namespace uavseg {

namespace {

void check_grid(const Tensor& grid, const BinaryMask& target, const char* what) {
    if (grid.rank() != 2 || grid.dim(0) != target.height || grid.dim(1) != target.width) {
        throw InputError(std::string(what) + ": prediction " + shape_string(grid.shape()) +
                         " does not match target {" + std::to_string(target.height) + "," +
                         std::to_string(target.width) + "}");
    }
}

void check_span(const Tensor& logits, std::span<const int> target_ids, Span span) {
    if (logits.rank() != 2 || target_ids.size() != static_cast<std::size_t>(logits.dim(0))) {
        throw InputError("text loss: one target id per logits row is required");
    }
    if (span.start < 0 || span.end < span.start || span.end > logits.dim(0)) {
        throw InputError("text loss span outside sequence");
    }
}

}  // namespace

void LossWeights::validate() const {
    if (txt < 0 || ref < 0 || dice < 0) throw ConfigError("loss weights must be >= 0");
    if (dice_smooth < 0) throw ConfigError("loss.dice_smooth must be >= 0");
}

void to_json(nlohmann::json& j, const LossReport& r) {
    j = {{"total", r.total}, {"txt", r.txt}, {"ref", r.ref}, {"dice", r.dice},
         {"text_active", r.text_active}};
}

double dice_loss(const Tensor& pred_probs, const BinaryMask& target, double eps) {
    check_grid(pred_probs, target, "dice_loss");
    const auto p = pred_probs.data();
    double inter = 0.0, sp = 0.0, st = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += static_cast<double>(p[i]) * target.bits[i];
        sp += p[i];
        st += target.bits[i];
    }
    return 1.0 - (2.0 * inter + eps) / (sp + st + eps);
}

double bce_mask_loss(const MaskLogits& logits, const BinaryMask& target) {
    check_grid(logits.values(), target, "bce_mask_loss");
    const auto z = logits.values().data();
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double zi = z[i];
        acc += std::max(zi, 0.0) - zi * target.bits[i] + std::log1p(std::exp(-std::abs(zi)));
    }
    return acc / static_cast<double>(z.size());
}

TextLossValue text_loss(const Tensor& logits, std::span<const int> target_ids, Span span) {
    check_span(logits, target_ids, span);
    if (span.size() == 0) return {0.0, false};
    const int classes = logits.dim(1);
    const auto v = logits.data();
    double acc = 0.0;
    for (int p = span.start; p < span.end; ++p) {
        const int t = target_ids[p];
        if (t < 0 || t >= classes) throw InputError("text loss target id out of range");
        const float* row = v.data() + static_cast<std::size_t>(p) * classes;
        double mx = row[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, static_cast<double>(row[c]));
        double total = 0.0;
        for (int c = 0; c < classes; ++c) total += std::exp(row[c] - mx);
        acc += mx + std::log(total) - row[t];
    }
    return {acc / span.size(), true};
}

LossReport total_loss(double txt, double ref, double dice, const LossWeights& weights,
                      bool text_active) {
    if (txt < 0 || ref < 0 || dice < 0) {
        throw InputError("loss components must be non-negative");
    }
    LossReport r;
    r.txt = txt;
    r.ref = ref;
    r.dice = dice;
    r.text_active = text_active;
    r.total = weights.txt * txt + weights.ref * ref + weights.dice * dice;
    return r;
}

Tensor dice_loss_tensor(const Tensor& pred_probs, const BinaryMask& target, float eps) {
    check_grid(pred_probs, target, "dice_loss");
    return dice_from_probs(pred_probs, target.as_floats(), eps);
}

Tensor bce_mask_loss_tensor(const MaskLogits& logits, const BinaryMask& target) {
    check_grid(logits.values(), target, "bce_mask_loss");
    return bce_with_logits(logits.values(), target.as_floats());
}

Tensor text_loss_tensor(const Tensor& logits, std::span<const int> target_ids, Span span) {
    check_span(logits, target_ids, span);
    if (span.size() == 0) return Tensor::scalar(0.0f);
    std::vector<int> masked(target_ids.size(), -1);
    for (int p = span.start; p < span.end; ++p) masked[p] = target_ids[p];
    return cross_entropy_rows(logits, masked);
}

}  // namespace uavseg
