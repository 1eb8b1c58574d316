#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dada/model.hpp"
#include "dada/synthdata.hpp"

namespace dada::metrics {

/// C x C counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes = 0);

    int num_classes() const noexcept { return num_classes_; }
    std::uint64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt * num_classes_ + pred)]; }
    std::uint64_t& at(int gt, int pred) { return counts_[static_cast<std::size_t>(gt * num_classes_ + pred)]; }
    std::uint64_t total() const;

    void add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;

private:
    int num_classes_;
    std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int num_classes);

struct IouSummary {
    std::vector<std::optional<double>> per_class_iou;  // nullopt: absent from both gt and prediction
    double miou = 0.0;
    std::optional<double> miou_subset;
};

/// IoU_c = TP / (TP + FP + FN); undefined classes are excluded from means.
IouSummary iou_report(const ConfusionMatrix& cm, const std::vector<int>* subset = nullptr);

/// Fraction of images whose adapted per-image mIoU is strictly below the baseline's.
double negative_transfer_rate(std::span<const double> adapted, std::span<const double> baseline);

struct EvalReport {
    std::vector<std::optional<double>> per_class_iou;
    double miou = 0.0;
    std::optional<double> miou_subset;
    std::vector<double> per_image_miou;
    std::optional<double> negative_transfer_rate;
    nlohmann::json meta = nlohmann::json::object();
};

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

/// Per-pixel argmax over channels; ties go to the lowest class index.
template <typename T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& probs);

template <typename T>
EvalReport evaluate_model(const model::ModelParams<T>& params, const synth::Dataset& data,
                          const std::optional<std::vector<double>>& baseline_per_image = std::nullopt,
                          const std::vector<int>& subset = {});

/// Same aggregation as evaluate_model from already-predicted label maps.
EvalReport evaluate_predictions(const std::vector<std::vector<std::uint8_t>>& preds, const synth::Dataset& data,
                                const std::optional<std::vector<double>>& baseline_per_image = std::nullopt,
                                const std::vector<int>& subset = {});

}  // namespace dada::metrics
