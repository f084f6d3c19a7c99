#include "dgseg/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace dgseg {

namespace {

void check(const Tensor& logits, const std::vector<std::uint8_t>& target, const Tensor* d) {
  if (logits.c != 1) throw std::invalid_argument("loss: logits must have 1 channel");
  if (logits.v.size() != target.size())
    throw std::invalid_argument("loss: logits/target size mismatch");
  if (d && d->v.size() != logits.v.size())
    throw std::invalid_argument("loss: dlogits size mismatch");
}

}  // namespace

double dice_loss(const Tensor& logits, const std::vector<std::uint8_t>& target,
                 Tensor* dlogits, double weight) {
  check(logits, target, dlogits);
  constexpr double eps = 1.0;
  const std::size_t n = logits.v.size();

  double sum_p = 0, sum_g = 0, sum_pg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = sigmoid(logits.v[i]);
    const double g = target[i] ? 1.0 : 0.0;
    sum_p += p;
    sum_g += g;
    sum_pg += p * g;
  }
  const double num = 2.0 * sum_pg + eps;
  const double den = sum_p + sum_g + eps;
  const double loss = 1.0 - num / den;

  if (dlogits) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(logits.v[i]);
      const double g = target[i] ? 1.0 : 0.0;
      const double dp = -(2.0 * g * den - num) / (den * den);
      dlogits->v[i] += weight * dp * p * (1.0 - p);
    }
  }
  return weight * loss;
}

double bce_loss(const Tensor& logits, const std::vector<std::uint8_t>& target,
                Tensor* dlogits, double weight) {
  check(logits, target, dlogits);
  const std::size_t n = logits.v.size();
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = logits.v[i];
    const double g = target[i] ? 1.0 : 0.0;
    loss += std::max(l, 0.0) - l * g + std::log1p(std::exp(-std::abs(l)));
  }
  loss /= double(n);
  if (dlogits) {
    const double inv = weight / double(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = target[i] ? 1.0 : 0.0;
      dlogits->v[i] += inv * (sigmoid(logits.v[i]) - g);
    }
  }
  return weight * loss;
}

double dice_ce_loss(const Tensor& logits, const std::vector<std::uint8_t>& target,
                    Tensor* dlogits) {
  return dice_loss(logits, target, dlogits) + bce_loss(logits, target, dlogits);
}

}  // namespace dgseg
