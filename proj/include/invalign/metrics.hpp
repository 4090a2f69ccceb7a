#pragma once

// Evaluation metrics with spoof as the positive class: a higher score means
// "more likely spoof". Threshold metrics scan every distinct cut point of the
// sorted scores, predicting spoof for scores strictly above the cut.

#include <cstddef>
#include <span>
#include <vector>

#include "invalign/numkit.hpp"

namespace invalign {

struct ScoredSet {
    Vector scores;
    std::vector<int> labels;  // 0 live, 1 spoof

    /// Throws std::invalid_argument on length mismatch or a missing class.
    void validate() const;
};

struct RocPoint {
    double threshold;  // spoof iff score > threshold
    double fpr;
    double tpr;
};

/// From threshold +∞ down to −∞; first point (0, 0), last (1, 1).
std::vector<RocPoint> roc_curve(const ScoredSet& s);

/// Mann–Whitney statistic, ties counting ½.
double auc(const ScoredSet& s);

struct HterResult {
    double hter;
    double far;  // live accepted as spoof
    double frr;  // spoof rejected as live
    double threshold;
};

/// HTER at the threshold that minimizes |FAR − FRR| on the evaluated set;
/// among equally balanced thresholds the smallest HTER wins.
HterResult hter_at_eer(const ScoredSet& s);
double hter(const ScoredSet& s);

/// Largest TPR over thresholds with FPR ≤ fpr_cap.
double tpr_at_fpr(const ScoredSet& s, double fpr_cap = 0.05);

/// 1 − cos(mean spoof embedding, mean live embedding).
double s_sep(const Matrix& z, std::span<const int> labels);

/// Mean over hyperplanes of cos(β_e, mean spoof − mean live). Only the first
/// z.cols() entries of each β enter the cosine.
double s_align(std::span<const Vector> betas, const Matrix& z, std::span<const int> labels);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> xs, std::span<const double> ys);

/// Average ranks (1-based) with ties sharing their mean rank.
Vector average_ranks(std::span<const double> v);

}  // namespace invalign
