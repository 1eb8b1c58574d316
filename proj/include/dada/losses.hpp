#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>

#include "dada/error.hpp"
#include "dada/tensor.hpp"

namespace dada::losses {

inline constexpr double kProbClamp = 1e-12;
inline constexpr double kDefaultBerhuFraction = 0.2;

/// Reverse Huber: l1 inside [-c, c], scaled l2 outside. Continuous at |e| = c.
inline double berhu(double e, double c) {
    const double a = std::abs(e);
    return a <= c ? a : (e * e + c * c) / (2.0 * c);
}

/// d berhu / d e for a fixed threshold.
inline double berhu_grad(double e, double c) {
    const double a = std::abs(e);
    if (a <= c) return e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0);
    return e / c;
}

/// Pixel-mean negative log-likelihood of the true class. probs is [C,H,W].
template <typename T>
double seg_loss(const Tensor<T>& probs, std::span<const std::uint8_t> labels) {
    const auto c = probs.channels();
    const auto hw = probs.height() * probs.width();
    if (static_cast<std::int64_t>(labels.size()) != hw)
        throw ShapeError("seg_loss: label map has " + std::to_string(labels.size()) +
                         " pixels, prediction has " + std::to_string(hw));
    double total = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) {
        const auto y = labels[static_cast<std::size_t>(i)];
        if (y >= c)
            throw std::out_of_range("seg_loss: class index " + std::to_string(y) +
                                    " out of range for C=" + std::to_string(c));
        const double p = static_cast<double>(probs[static_cast<std::size_t>(y * hw + i)]);
        total -= std::log(std::max(p, kProbClamp));
    }
    return total / static_cast<double>(hw);
}

/// Per-image berHu threshold: fraction of the largest absolute residual.
template <typename T>
double berhu_threshold(const Tensor<T>& pred, const Tensor<T>& target, double fraction) {
    if (!pred.same_shape(target))
        throw ShapeError("depth_loss: prediction " + pred.shape_string() + " vs target " +
                         target.shape_string());
    double max_res = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        max_res = std::max(max_res, std::abs(static_cast<double>(pred[i]) - static_cast<double>(target[i])));
    return fraction * max_res;
}

/// Pixel-mean berHu of the depth residual; 0 when prediction equals target.
template <typename T>
double depth_loss(const Tensor<T>& pred, const Tensor<T>& target,
                  double fraction = kDefaultBerhuFraction) {
    const double c = berhu_threshold(pred, target, fraction);
    if (c <= 0.0) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        total += berhu(static_cast<double>(pred[i]) - static_cast<double>(target[i]), c);
    return total / static_cast<double>(pred.size());
}

inline double source_objective(double seg, double depth, double lambda_dep) {
    return seg + lambda_dep * depth;
}

inline double sigmoid(double s) {
    return s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
}

/// Binary cross-entropy of sigmoid(score) against a domain label, one position.
inline double bce_from_score(double score, int label) {
    if (label == 1) return -std::log(std::max(sigmoid(score), kProbClamp));
    return -std::log(std::max(sigmoid(-score), kProbClamp));
}

/// Gradient of bce_from_score w.r.t. the raw score (zero where clamped).
inline double bce_grad(double score, int label) {
    if (label == 1) {
        const double p = sigmoid(score);
        return p > kProbClamp ? -(1.0 - p) : 0.0;
    }
    const double q = sigmoid(-score);
    return q > kProbClamp ? (1.0 - q) : 0.0;
}

/// Mean BCE over all positions of a raw score map. Source is 1, target is 0.
template <typename T>
double domain_bce(const Tensor<T>& scores, int label) {
    if (label != 0 && label != 1) throw std::invalid_argument("domain_bce: label must be 0 or 1");
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) total += bce_from_score(static_cast<double>(scores[i]), label);
    return total / static_cast<double>(scores.size());
}

}  // namespace dada::losses
