#pragma once

#include <cmath>

#include "dada/error.hpp"
#include "dada/tensor.hpp"

namespace dada::fusion {

inline constexpr double kSurprisalLogBase = 2.0;

/// Weighted self-information of one probability, 0 log 0 := 0.
inline double surprisal(double p, double log_base = kSurprisalLogBase) {
    if (p <= 0.0) return 0.0;
    return -p * std::log(p) / std::log(log_base);
}

/// Element-wise -p log p over a [C,H,W] soft segmentation map.
template <typename T>
Tensor<T> self_information(const Tensor<T>& probs, double log_base = kSurprisalLogBase) {
    Tensor<T> out(probs.shape());
    for (std::size_t i = 0; i < probs.size(); ++i)
        out[i] = static_cast<T>(surprisal(static_cast<double>(probs[i]), log_base));
    return out;
}

/// Depth-aware map: surprisal [C,H,W] scaled per pixel by inverse depth [1,H,W].
template <typename T>
Tensor<T> dada_fusion(const Tensor<T>& surprisal_map, const Tensor<T>& inv_depth) {
    if (surprisal_map.rank() != 3 || inv_depth.rank() != 3 || inv_depth.channels() != 1 ||
        surprisal_map.height() != inv_depth.height() || surprisal_map.width() != inv_depth.width())
        throw ShapeError("dada_fusion: surprisal " + surprisal_map.shape_string() +
                         " incompatible with depth " + inv_depth.shape_string());
    Tensor<T> out(surprisal_map.shape());
    const auto hw = surprisal_map.height() * surprisal_map.width();
    for (std::int64_t c = 0; c < surprisal_map.channels(); ++c)
        for (std::int64_t i = 0; i < hw; ++i)
            out[static_cast<std::size_t>(c * hw + i)] =
                surprisal_map[static_cast<std::size_t>(c * hw + i)] * inv_depth[static_cast<std::size_t>(i)];
    return out;
}

}  // namespace dada::fusion
