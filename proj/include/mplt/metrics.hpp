#pragma once

// Precision / success metrics over per-frame boxes.

#include <stdexcept>
#include <string>
#include <vector>

#include "mplt/box.hpp"

namespace mplt {

inline constexpr double kPrecisionThreshold = 20.0;
inline constexpr std::size_t kSuccessSteps = 21;  // IoU thresholds 0, 0.05, ..., 1

namespace detail {

inline void require_equal_length(const std::vector<BBox>& pred, const std::vector<BBox>& gt, const char* op) {
    if (pred.size() != gt.size())
        throw std::invalid_argument(std::string(op) + ": " + std::to_string(pred.size()) + " predictions vs " +
                                    std::to_string(gt.size()) + " ground-truth boxes");
}

}  // namespace detail

inline double success_threshold(std::size_t i) { return static_cast<double>(i) / (kSuccessSteps - 1); }

/// Fraction of frames whose centre error is within `threshold` pixels (≤).
inline double precision_rate(const std::vector<BBox>& pred, const std::vector<BBox>& gt,
                             double threshold = kPrecisionThreshold) {
    detail::require_equal_length(pred, gt, "precision_rate");
    if (pred.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += cle(pred[i], gt[i]) <= threshold ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

/// success(t) = fraction of frames with IoU ≥ t for the 21 thresholds.
inline std::vector<double> success_curve(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
    detail::require_equal_length(pred, gt, "success_curve");
    std::vector<double> curve(kSuccessSteps, 0.0);
    if (pred.empty()) return curve;
    std::vector<double> overlaps(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) overlaps[i] = iou(pred[i], gt[i]);
    for (std::size_t k = 0; k < kSuccessSteps; ++k) {
        std::size_t hits = 0;
        for (double o : overlaps) hits += o >= success_threshold(k) ? 1 : 0;
        curve[k] = static_cast<double>(hits) / static_cast<double>(pred.size());
    }
    return curve;
}

/// Area under the success curve: mean of its 21 samples.
inline double success_auc(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
    const auto curve = success_curve(pred, gt);
    double s = 0;
    for (double v : curve) s += v;
    return s / static_cast<double>(curve.size());
}

/// Precision at each integer pixel threshold 0..max_threshold.
inline std::vector<double> precision_curve(const std::vector<BBox>& pred, const std::vector<BBox>& gt,
                                           std::size_t max_threshold = 50) {
    std::vector<double> curve;
    for (std::size_t t = 0; t <= max_threshold; ++t) curve.push_back(precision_rate(pred, gt, static_cast<double>(t)));
    return curve;
}

struct SequenceScore {
    std::string name;
    std::size_t frames = 0;
    double precision = 0;
    double success = 0;
};

struct EvalReport {
    double precision = 0;  // PR at 20 px
    double success = 0;    // SR (AUC)
    std::vector<double> precision_curve;
    std::vector<double> success_curve;
    std::vector<SequenceScore> sequences;
    double frames_per_second = 0;
};

/// Scores pooled over all frames of all sequences; per-sequence rows kept.
inline EvalReport evaluate(const std::vector<std::string>& names, const std::vector<std::vector<BBox>>& preds,
                           const std::vector<std::vector<BBox>>& gts) {
    if (names.size() != preds.size() || preds.size() != gts.size())
        throw std::invalid_argument("evaluate: mismatched sequence counts");
    std::vector<BBox> all_pred, all_gt;
    EvalReport report;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        detail::require_equal_length(preds[i], gts[i], "evaluate");
        report.sequences.push_back(
            {names[i], preds[i].size(), precision_rate(preds[i], gts[i]), success_auc(preds[i], gts[i])});
        all_pred.insert(all_pred.end(), preds[i].begin(), preds[i].end());
        all_gt.insert(all_gt.end(), gts[i].begin(), gts[i].end());
    }
    report.precision = precision_rate(all_pred, all_gt);
    report.success = success_auc(all_pred, all_gt);
    report.precision_curve = precision_curve(all_pred, all_gt);
    report.success_curve = success_curve(all_pred, all_gt);
    return report;
}

}  // namespace mplt
