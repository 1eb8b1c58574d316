#include "dada/metrics.hpp"

#include <cmath>

#include "dada/error.hpp"

namespace dada::metrics {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

void ConfusionMatrix::add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
    if (pred.size() != gt.size())
        throw ShapeError("confusion: prediction has " + std::to_string(pred.size()) + " pixels, ground truth " +
                         std::to_string(gt.size()));
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] >= num_classes_ || gt[i] >= num_classes_)
            throw std::out_of_range("confusion: class index out of range at pixel " + std::to_string(i));
        ++at(gt[i], pred[i]);
    }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.num_classes_ != num_classes_) throw ShapeError("confusion: merging matrices of different sizes");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

ConfusionMatrix confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int num_classes) {
    ConfusionMatrix cm(num_classes);
    cm.add(pred, gt);
    return cm;
}

IouSummary iou_report(const ConfusionMatrix& cm, const std::vector<int>* subset) {
    const int c = cm.num_classes();
    IouSummary out;
    out.per_class_iou.resize(static_cast<std::size_t>(c));
    double sum = 0;
    int defined = 0;
    for (int k = 0; k < c; ++k) {
        std::uint64_t row = 0, col = 0;
        for (int j = 0; j < c; ++j) {
            row += cm.at(k, j);
            col += cm.at(j, k);
        }
        const auto tp = cm.at(k, k);
        const auto denom = row + col - tp;
        if (denom == 0) continue;
        const double iou = static_cast<double>(tp) / static_cast<double>(denom);
        out.per_class_iou[static_cast<std::size_t>(k)] = iou;
        sum += iou;
        ++defined;
    }
    out.miou = defined ? sum / defined : 0.0;
    if (subset) {
        double s = 0;
        int n = 0;
        for (int k : *subset) {
            if (k < 0 || k >= c)
                throw std::out_of_range("iou_report: subset class " + std::to_string(k) + " out of range");
            if (const auto& v = out.per_class_iou[static_cast<std::size_t>(k)]) {
                s += *v;
                ++n;
            }
        }
        out.miou_subset = n ? s / n : 0.0;
    }
    return out;
}

double negative_transfer_rate(std::span<const double> adapted, std::span<const double> baseline) {
    if (adapted.size() != baseline.size())
        throw std::invalid_argument("negative_transfer_rate: " + std::to_string(adapted.size()) + " adapted vs " +
                                    std::to_string(baseline.size()) + " baseline scores");
    if (adapted.empty()) return 0.0;
    std::size_t drops = 0;
    for (std::size_t i = 0; i < adapted.size(); ++i)
        if (adapted[i] < baseline[i]) ++drops;
    return static_cast<double>(drops) / static_cast<double>(adapted.size());
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& v : r.per_class_iou) per_class.push_back(optional_json(v));
    return {{"per_class_iou", per_class},
            {"miou", r.miou},
            {"miou_subset", optional_json(r.miou_subset)},
            {"per_image_miou", r.per_image_miou},
            {"negative_transfer_rate", optional_json(r.negative_transfer_rate)},
            {"meta", r.meta}};
}

EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    for (const auto& v : j.at("per_class_iou"))
        r.per_class_iou.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    r.miou = j.at("miou").get<double>();
    if (j.contains("miou_subset") && !j["miou_subset"].is_null()) r.miou_subset = j["miou_subset"].get<double>();
    r.per_image_miou = j.at("per_image_miou").get<std::vector<double>>();
    if (j.contains("negative_transfer_rate") && !j["negative_transfer_rate"].is_null())
        r.negative_transfer_rate = j["negative_transfer_rate"].get<double>();
    if (j.contains("meta")) r.meta = j["meta"];
    return r;
}

template <typename T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& probs) {
    const auto c = probs.channels();
    const auto hw = probs.height() * probs.width();
    std::vector<std::uint8_t> out(static_cast<std::size_t>(hw));
    for (std::int64_t i = 0; i < hw; ++i) {
        std::int64_t best = 0;
        for (std::int64_t k = 1; k < c; ++k)
            if (probs[static_cast<std::size_t>(k * hw + i)] > probs[static_cast<std::size_t>(best * hw + i)]) best = k;
        out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
    }
    return out;
}

EvalReport evaluate_predictions(const std::vector<std::vector<std::uint8_t>>& preds, const synth::Dataset& data,
                                const std::optional<std::vector<double>>& baseline, const std::vector<int>& subset) {
    const int c = data.spec().num_classes;
    if (preds.size() != data.size()) throw std::invalid_argument("evaluate: one prediction per image required");
    ConfusionMatrix total(c);
    EvalReport report;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& gt = data.labels(i);
        const auto cm = confusion(preds[i], gt, c);
        report.per_image_miou.push_back(iou_report(cm).miou);
        total += cm;
    }
    const auto summary = iou_report(total, subset.empty() ? nullptr : &subset);
    report.per_class_iou = summary.per_class_iou;
    report.miou = summary.miou;
    report.miou_subset = subset.empty() ? std::optional<double>(summary.miou) : summary.miou_subset;
    if (baseline) report.negative_transfer_rate = negative_transfer_rate(report.per_image_miou, *baseline);
    report.meta = {{"num_images", data.size()},
                   {"num_classes", c},
                   {"class_names", data.spec().class_names},
                   {"subset", subset}};
    return report;
}

template <typename T>
EvalReport evaluate_model(const model::ModelParams<T>& params, const synth::Dataset& data,
                          const std::optional<std::vector<double>>& baseline, const std::vector<int>& subset) {
    const auto& spec = data.spec();
    if (spec.num_classes != params.config.num_classes || spec.height != params.config.input_height ||
        spec.width != params.config.input_width)
        throw DataError("evaluation dataset " + data.dir().string() + " does not match the model configuration");
    std::vector<std::vector<std::uint8_t>> preds;
    preds.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto image = model::image_to_chw<T>(data.image(i), spec.height, spec.width);
        auto opts = params.arch;
        opts.depth_branch = false;  // segmentation only
        const auto out = model::forward(params, image, opts);
        preds.push_back(argmax_labels(out.seg.value()));
    }
    return evaluate_predictions(preds, data, baseline, subset);
}

template std::vector<std::uint8_t> argmax_labels<float>(const Tensor<float>&);
template std::vector<std::uint8_t> argmax_labels<double>(const Tensor<double>&);
template EvalReport evaluate_model<float>(const model::ModelParams<float>&, const synth::Dataset&,
                                          const std::optional<std::vector<double>>&, const std::vector<int>&);
template EvalReport evaluate_model<double>(const model::ModelParams<double>&, const synth::Dataset&,
                                           const std::optional<std::vector<double>>&, const std::vector<int>&);

}  // namespace dada::metrics
