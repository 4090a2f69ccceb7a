#include "invalign/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace invalign {

void ScoredSet::validate() const {
    if (scores.size() != labels.size()) {
        throw std::invalid_argument("scored set: scores and labels differ in length");
    }
    bool live = false, spoof = false;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 0) {
            live = true;
        } else if (labels[i] == 1) {
            spoof = true;
        } else {
            throw std::invalid_argument("scored set: labels must be 0 or 1");
        }
        if (!std::isfinite(scores[i])) throw NumericalError("scored set: non-finite score");
    }
    if (!live || !spoof) {
        throw std::invalid_argument("scored set: both live and spoof samples are required");
    }
}

namespace {

/// Distinct scores ascending with per-group live/spoof counts.
struct TieGroup {
    double score;
    std::size_t live;
    std::size_t spoof;
};

std::vector<TieGroup> tie_groups(const ScoredSet& s) {
    std::vector<std::size_t> order(s.scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
    std::vector<TieGroup> groups;
    for (auto i : order) {
        if (groups.empty() || groups.back().score != s.scores[i]) {
            groups.push_back({s.scores[i], 0, 0});
        }
        (s.labels[i] == 1 ? groups.back().spoof : groups.back().live) += 1;
    }
    return groups;
}

}  // namespace

std::vector<RocPoint> roc_curve(const ScoredSet& s) {
    s.validate();
    const auto groups = tie_groups(s);
    double n_live = 0, n_spoof = 0;
    for (const auto& g : groups) {
        n_live += static_cast<double>(g.live);
        n_spoof += static_cast<double>(g.spoof);
    }
    std::vector<RocPoint> curve;
    curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t fp = 0, tp = 0;
    for (auto it = groups.rbegin(); it != groups.rend(); ++it) {
        fp += it->live;
        tp += it->spoof;
        // cut just below this group: every score >= it->score is called spoof
        const auto next = std::next(it);
        const double cut =
            next == groups.rend() ? -std::numeric_limits<double>::infinity() : next->score;
        curve.push_back({cut, static_cast<double>(fp) / n_live, static_cast<double>(tp) / n_spoof});
    }
    return curve;
}

double auc(const ScoredSet& s) {
    s.validate();
    const auto groups = tie_groups(s);
    // 2 × (number of spoof > live pairs) + (number of tied pairs); integers
    // in double so the result matches a pairwise count bit-for-bit.
    double twice = 0.0;
    double live_below = 0.0;
    double n_live = 0.0, n_spoof = 0.0;
    for (const auto& g : groups) {
        const double sp = static_cast<double>(g.spoof);
        const double lv = static_cast<double>(g.live);
        twice += 2.0 * sp * live_below + sp * lv;
        live_below += lv;
        n_live += lv;
        n_spoof += sp;
    }
    return twice / 2.0 / (n_live * n_spoof);
}

HterResult hter_at_eer(const ScoredSet& s) {
    s.validate();
    const auto groups = tie_groups(s);
    std::int64_t n_live = 0, n_spoof = 0;
    for (const auto& g : groups) {
        n_live += static_cast<std::int64_t>(g.live);
        n_spoof += static_cast<std::int64_t>(g.spoof);
    }
    // FAR − FRR and FAR + FRR scaled by n_live·n_spoof are integers, so the
    // selection is exact even when two cuts tie.
    auto scaled = [&](std::int64_t fp, std::int64_t fn) {
        return std::pair<std::int64_t, std::int64_t>{std::abs(fp * n_spoof - fn * n_live), fp * n_spoof + fn * n_live};
    };
    HterResult best{};
    std::pair<std::int64_t, std::int64_t> best_key{std::numeric_limits<std::int64_t>::max(), 0};
    auto consider = [&](std::int64_t fp, std::int64_t fn, double threshold) {
        const auto key = scaled(fp, fn);
        if (key < best_key) {
            best_key = key;
            const double far = static_cast<double>(fp) / static_cast<double>(n_live);
            const double frr = static_cast<double>(fn) / static_cast<double>(n_spoof);
            best = {0.5 * (far + frr), far, frr, threshold};
        }
    };
    std::int64_t fp = 0, tp = 0;
    consider(0, n_spoof, std::numeric_limits<double>::infinity());
    for (auto it = groups.rbegin(); it != groups.rend(); ++it) {
        fp += static_cast<std::int64_t>(it->live);
        tp += static_cast<std::int64_t>(it->spoof);
        const auto next = std::next(it);
        consider(fp, n_spoof - tp,
                 next == groups.rend() ? -std::numeric_limits<double>::infinity() : next->score);
    }
    return best;
}

double hter(const ScoredSet& s) { return hter_at_eer(s).hter; }

double tpr_at_fpr(const ScoredSet& s, double fpr_cap) {
    if (!(fpr_cap > 0.0 && fpr_cap < 1.0)) {
        throw std::invalid_argument("tpr_at_fpr: cap must lie in (0, 1)");
    }
    double best = 0.0;
    for (const auto& p : roc_curve(s)) {
        if (p.fpr <= fpr_cap) best = std::max(best, p.tpr);
    }
    return best;
}

namespace {

struct ClassMeans {
    Vector live;
    Vector spoof;
};

ClassMeans class_means(const Matrix& z, std::span<const int> labels) {
    if (labels.size() != z.rows()) throw std::invalid_argument("labels do not match embeddings");
    ClassMeans m{Vector(z.cols(), 0.0), Vector(z.cols(), 0.0)};
    std::size_t n_live = 0, n_spoof = 0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        Vector& dst = labels[i] == 1 ? m.spoof : m.live;
        (labels[i] == 1 ? n_spoof : n_live) += 1;
        const auto r = z.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) dst[j] += r[j];
    }
    if (n_live == 0 || n_spoof == 0) {
        throw std::invalid_argument("both live and spoof embeddings are required");
    }
    for (double& v : m.live) v /= static_cast<double>(n_live);
    for (double& v : m.spoof) v /= static_cast<double>(n_spoof);
    return m;
}

}  // namespace

double s_sep(const Matrix& z, std::span<const int> labels) {
    const auto m = class_means(z, labels);
    return 1.0 - cosine(m.spoof, m.live);
}

double s_align(std::span<const Vector> betas, const Matrix& z, std::span<const int> labels) {
    if (betas.empty()) throw std::invalid_argument("s_align: no hyperplanes");
    const auto m = class_means(z, labels);
    Vector diff(z.cols());
    for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = m.spoof[j] - m.live[j];
    double sum = 0.0;
    for (const auto& b : betas) {
        if (b.size() < diff.size()) throw std::invalid_argument("s_align: hyperplane too short");
        sum += cosine(std::span<const double>(b).first(diff.size()), diff);
    }
    return sum / static_cast<double>(betas.size());
}

Vector average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    Vector ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("spearman: length mismatch");
    if (xs.size() < 3) throw std::invalid_argument("spearman: need at least three pairs");
    const Vector rx = average_ranks(xs);
    const Vector ry = average_ranks(ys);
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw std::invalid_argument("spearman: a constant sequence has no rank correlation");
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace invalign
