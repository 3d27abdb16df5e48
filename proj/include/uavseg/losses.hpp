#pragma once

#include <span>

#include <nlohmann/json.hpp>

#include "uavseg/backbone.hpp"
#include "uavseg/types.hpp"

namespace uavseg {

struct LossWeights {
    double txt = 1.0;
    double ref = 2.0;
    double dice = 0.5;
    double dice_smooth = 1.0;

    void validate() const;
};

struct LossReport {
    double total = 0.0;
    double txt = 0.0;
    double ref = 0.0;
    double dice = 0.0;
    bool text_active = true;
};

void to_json(nlohmann::json& j, const LossReport& r);

struct TextLossValue {
    double value = 0.0;
    bool active = false;
};

// Reference evaluations, accumulated in double.

/// 1 - (2 sum(p t) + eps) / (sum p + sum t + eps); pred_probs is {H,W}.
double dice_loss(const Tensor& pred_probs, const BinaryMask& target, double eps = 1.0);
/// Mean stable-form BCE on logits.
double bce_mask_loss(const MaskLogits& logits, const BinaryMask& target);
/// Mean cross-entropy of rows p in `span` against target_ids[p]; inactive on an empty span.
TextLossValue text_loss(const Tensor& logits, std::span<const int> target_ids, Span span);
/// Weighted sum; throws InputError on a negative component.
LossReport total_loss(double txt, double ref, double dice, const LossWeights& weights,
                      bool text_active = true);

// Differentiable counterparts used by training.

Tensor dice_loss_tensor(const Tensor& pred_probs, const BinaryMask& target, float eps = 1.0f);
Tensor bce_mask_loss_tensor(const MaskLogits& logits, const BinaryMask& target);
/// Scalar zero tensor (no graph) when the span is empty.
Tensor text_loss_tensor(const Tensor& logits, std::span<const int> target_ids, Span span);

}  // namespace uavseg
