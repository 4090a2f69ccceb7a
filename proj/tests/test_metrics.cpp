#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "invalign/metrics.hpp"
#include "test_support.hpp"

using namespace invalign;

namespace {

double auc_pairwise(const ScoredSet& s) {
    double num = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.scores.size(); ++i) {
        if (s.labels[i] != 1) continue;
        for (std::size_t j = 0; j < s.scores.size(); ++j) {
            if (s.labels[j] != 0) continue;
            pairs += 1.0;
            if (s.scores[i] > s.scores[j]) num += 1.0;
            if (s.scores[i] == s.scores[j]) num += 0.5;
        }
    }
    return num / pairs;
}

struct Rates {
    double far, frr, tpr;
};

/// Every cut position: below the minimum, between consecutive distinct
/// scores, and above the maximum.
std::vector<Rates> scan(const ScoredSet& s) {
    Vector cuts{-std::numeric_limits<double>::infinity()};
    Vector sorted = s.scores;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (double v : sorted) cuts.push_back(v);  // spoof iff score > v
    std::vector<Rates> out;
    for (double t : cuts) {
        double fa = 0, fr = 0, nl = 0, ns = 0;
        for (std::size_t i = 0; i < s.scores.size(); ++i) {
            const bool spoof_pred = s.scores[i] > t;
            if (s.labels[i] == 0) {
                nl += 1;
                fa += spoof_pred ? 1 : 0;
            } else {
                ns += 1;
                fr += spoof_pred ? 0 : 1;
            }
        }
        out.push_back({fa / nl, fr / ns, 1.0 - fr / ns});
    }
    return out;
}

/// |FAR − FRR| and FAR + FRR compared as exact fractions, so tied cuts are
/// recognised as ties.
double hter_oracle(const ScoredSet& s) {
    long nl = 0, ns = 0;
    for (int y : s.labels) (y == 0 ? nl : ns) += 1;
    long best_gap = -1, best_sum = 0;
    double best = 2.0;
    for (const auto& r : scan(s)) {
        const long fa = std::lround(r.far * static_cast<double>(nl));
        const long fr = std::lround(r.frr * static_cast<double>(ns));
        const long gap = std::labs(fa * ns - fr * nl), sum = fa * ns + fr * nl;
        if (best_gap < 0 || gap < best_gap || (gap == best_gap && sum < best_sum)) {
            best_gap = gap;
            best_sum = sum;
            best = 0.5 * (r.far + r.frr);
        }
    }
    return best;
}

double tpr_oracle(const ScoredSet& s, double cap) {
    double best = 0.0;
    for (const auto& r : scan(s)) {
        if (r.far <= cap) best = std::max(best, r.tpr);
    }
    return best;
}

ScoredSet random_set(std::size_t n, Rng& rng, bool coarse) {
    ScoredSet s;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(rng.index(2));
        s.labels.push_back(y);
        const double v = rng.normal() + 0.8 * y;
        s.scores.push_back(coarse ? std::round(v * 4) / 4 : v);
    }
    s.labels[0] = 0;
    s.labels[1] = 1;
    return s;
}

}  // namespace

TEST_CASE("auc: examples") {
    CHECK(auc({{0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}}) == 1.0);
    CHECK(auc({{0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}}) == 0.5);
    CHECK_THROWS_AS(auc({{0.1, 0.2}, {0, 0}}), std::invalid_argument);
    CHECK_THROWS_AS(auc({{0.1}, {0, 1}}), std::invalid_argument);
}

TEST_CASE("auc: equals the pairwise count exactly") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const auto s = random_set(200, rng, trial % 2 == 0);
        CHECK(auc(s) == auc_pairwise(s));
    }
}

TEST_CASE("auc: label flip complements") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        auto s = random_set(60, rng, true);
        const double a = auc(s);
        for (int& y : s.labels) y = 1 - y;
        CHECK(a + auc(s) == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("hter: examples") {
    CHECK(hter({{0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}}) == 0.0);
    CHECK(hter({{0.3, 0.3, 0.3, 0.3}, {0, 1, 0, 1}}) == 0.5);
    const ScoredSet reversed{{0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}};
    CHECK(hter(reversed) == doctest::Approx(hter_oracle(reversed)));
}

TEST_CASE("hter and tpr_at_fpr: exhaustive scan oracles") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const auto s = random_set(100, rng, trial % 2 == 0);
        CHECK(hter(s) == doctest::Approx(hter_oracle(s)).epsilon(1e-14));
        CHECK(tpr_at_fpr(s, 0.05) == doctest::Approx(tpr_oracle(s, 0.05)).epsilon(1e-14));
        CHECK(tpr_at_fpr(s, 0.2) == doctest::Approx(tpr_oracle(s, 0.2)).epsilon(1e-14));
    }
}

TEST_CASE("tpr_at_fpr: examples") {
    CHECK(tpr_at_fpr({{0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}}) == 1.0);
    ScoredSet reversed;
    for (int i = 0; i < 20; ++i) {
        reversed.scores.push_back(100.0 + i);
        reversed.labels.push_back(0);
        reversed.scores.push_back(static_cast<double>(i));
        reversed.labels.push_back(1);
    }
    CHECK(tpr_at_fpr(reversed, 0.05) == 0.0);
    CHECK_THROWS_AS(tpr_at_fpr(reversed, 0.0), std::invalid_argument);
}

TEST_CASE("threshold metrics are invariant under increasing transforms") {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const auto s = random_set(80, rng, trial % 2 == 0);
        const double a = rng.uniform(0.1, 3.0), b = rng.uniform(-5.0, 5.0);
        ScoredSet t = s;
        for (double& v : t.scores) v = trial % 3 == 0 ? std::exp(a * v) : std::tanh(0.3 * v) * a + b;
        CHECK(auc(t) == auc(s));
        CHECK(hter(t) == hter(s));
        CHECK(tpr_at_fpr(t) == tpr_at_fpr(s));
    }
}

TEST_CASE("roc_curve: endpoints and monotonicity") {
    Rng rng(5);
    const auto s = random_set(50, rng, true);
    const auto c = roc_curve(s);
    CHECK(c.front().fpr == 0.0);
    CHECK(c.front().tpr == 0.0);
    CHECK(c.back().fpr == 1.0);
    CHECK(c.back().tpr == 1.0);
    for (std::size_t i = 1; i < c.size(); ++i) {
        CHECK(c[i].fpr >= c[i - 1].fpr);
        CHECK(c[i].tpr >= c[i - 1].tpr);
        CHECK(c[i].threshold < c[i - 1].threshold);
    }
}

TEST_CASE("s_sep: examples and scale invariance") {
    const std::vector<int> y{0, 0, 1, 1};
    CHECK(s_sep(Matrix{{1, 0}, {1, 0}, {1, 0}, {1, 0}}, y) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(s_sep(Matrix{{1, 0}, {1, 0}, {-1, 0}, {-1, 0}}, y) == doctest::Approx(2.0));
    CHECK(s_sep(Matrix{{1, 0}, {1, 0}, {0, 1}, {0, 1}}, y) == doctest::Approx(1.0));
    Rng rng(6);
    const Matrix z = testing::random_matrix(20, 4, rng);
    std::vector<int> labels(20);
    for (std::size_t i = 0; i < 20; ++i) labels[i] = static_cast<int>(i % 2);
    Matrix scaled = z;
    for (double& v : scaled.data()) v *= 3.5;
    CHECK(s_sep(scaled, labels) == doctest::Approx(s_sep(z, labels)).epsilon(1e-12));
}

TEST_CASE("s_align: examples and scale invariance") {
    const Matrix z{{0, 0}, {0, 0}, {2, 0}, {2, 0}};  // spoof − live = (2, 0)
    const std::vector<int> y{0, 0, 1, 1};
    CHECK(s_align(std::vector<Vector>{{1, 0}, {3, 0}}, z, y) == doctest::Approx(1.0));
    CHECK(s_align(std::vector<Vector>{{0, 1}, {0, -2}}, z, y) == doctest::Approx(0.0));
    CHECK(s_align(std::vector<Vector>{{-1, 0}, {-5, 0}}, z, y) == doctest::Approx(-1.0));
    // a bias entry does not enter the cosine
    CHECK(s_align(std::vector<Vector>{{1, 0, 7}}, z, y) == doctest::Approx(1.0));

    Rng rng(7);
    const Matrix r = testing::random_matrix(20, 3, rng);
    std::vector<int> labels(20);
    for (std::size_t i = 0; i < 20; ++i) labels[i] = static_cast<int>(i % 2);
    std::vector<Vector> betas{testing::random_vector(3, rng), testing::random_vector(3, rng)};
    const double base = s_align(betas, r, labels);
    for (double& v : betas[1]) v *= 4.0;
    Matrix scaled = r;
    for (double& v : scaled.data()) v *= 0.25;
    CHECK(s_align(betas, scaled, labels) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("spearman: examples and rank oracle") {
    const Vector x{1, 5, 2, 8, 3};
    Vector neg = x;
    for (double& v : neg) v = -v;
    CHECK(spearman(x, x) == doctest::Approx(1.0));
    CHECK(spearman(x, neg) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(spearman(Vector{1, 2}, Vector{1, 2}), std::invalid_argument);
    CHECK_THROWS_AS(spearman(Vector{1, 2, 3}, Vector{1, 2}), std::invalid_argument);

    CHECK(average_ranks(Vector{10, 20, 20, 5}) == Vector{2, 3.5, 3.5, 1});

    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        Vector a(30), b(30);
        for (std::size_t i = 0; i < 30; ++i) {
            a[i] = std::round(rng.normal() * 3);
            b[i] = a[i] + std::round(rng.normal() * 3);
        }
        // oracle: ranks by counting, then Pearson
        auto rank = [](const Vector& v) {
            Vector r(v.size());
            for (std::size_t i = 0; i < v.size(); ++i) {
                double less = 0, equal = 0;
                for (double w : v) {
                    less += w < v[i] ? 1 : 0;
                    equal += w == v[i] ? 1 : 0;
                }
                r[i] = less + (equal + 1) / 2;
            }
            return r;
        };
        const Vector ra = rank(a), rb = rank(b);
        const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / 30;
        const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / 30;
        double sab = 0, saa = 0, sbb = 0;
        for (std::size_t i = 0; i < 30; ++i) {
            sab += (ra[i] - ma) * (rb[i] - mb);
            saa += (ra[i] - ma) * (ra[i] - ma);
            sbb += (rb[i] - mb) * (rb[i] - mb);
        }
        CHECK(spearman(a, b) == doctest::Approx(sab / std::sqrt(saa * sbb)).epsilon(1e-12));
    }
}
