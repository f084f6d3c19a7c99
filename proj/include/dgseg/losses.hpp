#pragma once

#include <cstdint>
#include <vector>

#include "dgseg/tensor.hpp"

namespace dgseg {

// Soft Dice loss 1 - (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps) on sigmoid
// probabilities, smooth term eps = 1. When dlogits is non-null the gradient
// w.r.t. logits is ACCUMULATED into it (callers compose multiple losses).
double dice_loss(const Tensor& logits, const std::vector<std::uint8_t>& target,
                 Tensor* dlogits, double weight = 1.0);

// Mean binary cross-entropy with logits (numerically stable form).
double bce_loss(const Tensor& logits, const std::vector<std::uint8_t>& target,
                Tensor* dlogits, double weight = 1.0);

// Dice + BCE, the supervised segmentation loss.
double dice_ce_loss(const Tensor& logits, const std::vector<std::uint8_t>& target,
                    Tensor* dlogits);

}  // namespace dgseg
