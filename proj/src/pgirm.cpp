#include "invalign/pgirm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "invalign/losses.hpp"

namespace invalign {

void HyperplaneSet::validate() const {
    if (betas.empty()) throw std::invalid_argument("hyperplane set is empty");
    for (const auto& b : betas) {
        if (b.size() != betas.front().size()) {
            throw std::invalid_argument("hyperplanes differ in length");
        }
    }
    for (std::size_t e = 0; e < betas.size(); ++e) {
        require_finite(betas[e], "hyperplane " + std::to_string(e));
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
}

HyperplaneSet init_hyperplanes(std::size_t count, std::size_t dim, const Rng& rng, double stddev) {
    if (count == 0 || dim == 0) throw std::invalid_argument("init_hyperplanes: empty shape");
    HyperplaneSet set;
    for (std::size_t e = 0; e < count; ++e) {
        Rng r = rng.derive(Stream::Hyperplanes, e);
        Vector b(dim);
        for (double& v : b) v = stddev * r.normal();
        set.betas.push_back(std::move(b));
    }
    return set;
}

FarthestPeer farthest(const HyperplaneSet& set, std::size_t e, std::span<const double> candidate) {
    if (set.size() < 2) throw std::invalid_argument("farthest: need at least two hyperplanes");
    if (e >= set.size()) throw std::invalid_argument("farthest: domain index out of range");
    FarthestPeer best{set.size(), -1.0};
    for (std::size_t k = 0; k < set.size(); ++k) {
        if (k == e) continue;
        const double dist = distance(candidate, set.betas[k]);
        if (dist > best.distance) best = {k, dist};
    }
    return best;
}

Vector project_interpolate(std::span<const double> candidate, std::span<const double> peer,
                           double weight) {
    if (!(weight >= 0.0 && weight <= 1.0)) {
        throw std::invalid_argument("project_interpolate: weight must lie in [0, 1]");
    }
    if (candidate.size() != peer.size()) {
        throw std::invalid_argument("project_interpolate: length mismatch");
    }
    Vector out(candidate.size());
    for (std::size_t j = 0; j < out.size(); ++j) {
        out[j] = weight * candidate[j] + (1.0 - weight) * peer[j];
    }
    return out;
}

AdjacencyReport adjacency_membership(const HyperplaneSet& set, std::size_t e,
                                     std::span<const double> v) {
    const FarthestPeer far = farthest(set, e, set.betas[e]);
    AdjacencyReport rep;
    rep.farthest = far.index;
    rep.farthest_distance = far.distance;
    rep.radius = set.alpha * far.distance;
    rep.worst_distance = farthest(set, e, v).distance;
    rep.member = rep.worst_distance <= rep.radius;
    return rep;
}

double effective_alpha(const HyperplaneSet& set, std::size_t epoch) noexcept {
    return epoch > set.warmup_epochs ? set.alpha : 1.0;
}

namespace {

std::vector<Vector> sgd_candidates(const HyperplaneSet& set, std::span<const Vector> grads,
                                   double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("hyperplane update: learning rate must be positive");
    if (grads.size() != set.size()) {
        throw std::invalid_argument("hyperplane update: " + std::to_string(grads.size()) +
                                    " gradients for " + std::to_string(set.size()) +
                                    " hyperplanes");
    }
    std::vector<Vector> cand(set.size());
    for (std::size_t e = 0; e < set.size(); ++e) {
        if (grads[e].size() != set.betas[e].size()) {
            throw std::invalid_argument("hyperplane update: gradient length mismatch");
        }
        require_finite(grads[e], "hyperplane gradient " + std::to_string(e));
        cand[e].resize(grads[e].size());
        for (std::size_t j = 0; j < cand[e].size(); ++j) {
            cand[e][j] = set.betas[e][j] - lr * grads[e][j];
        }
    }
    return cand;
}

}  // namespace

HyperplaneSet pg_irm_update(const HyperplaneSet& set, std::span<const Vector> grads, double lr,
                            std::size_t epoch) {
    std::vector<Vector> cand = sgd_candidates(set, grads, lr);
    HyperplaneSet next = set;
    next.epoch = epoch;
    if (set.size() < 2) {
        next.betas = std::move(cand);
        return next;
    }
    const double weight = effective_alpha(set, epoch);
    for (std::size_t e = 0; e < set.size(); ++e) {
        const FarthestPeer peer = farthest(set, e, cand[e]);
        next.betas[e] = project_interpolate(cand[e], set.betas[peer.index], weight);
    }
    return next;
}

HyperplaneSet sgd_update(const HyperplaneSet& set, std::span<const Vector> grads, double lr,
                         std::size_t epoch) {
    HyperplaneSet next = set;
    next.betas = sgd_candidates(set, grads, lr);
    next.epoch = epoch;
    return next;
}

double s_cos(const HyperplaneSet& set) {
    if (set.size() < 2) throw std::invalid_argument("s_cos: need at least two hyperplanes");
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < set.size(); ++a) {
        for (std::size_t b = a + 1; b < set.size(); ++b, ++pairs) {
            sum += cosine(set.betas[a], set.betas[b]);
        }
    }
    return sum / static_cast<double>(pairs);
}

Vector mean_hyperplane(std::span<const Vector> betas) {
    if (betas.empty()) throw std::invalid_argument("mean_hyperplane: no hyperplanes");
    Vector mean(betas.front().size(), 0.0);
    for (const auto& b : betas) {
        if (b.size() != mean.size()) throw std::invalid_argument("hyperplanes differ in length");
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += b[j];
    }
    for (double& v : mean) v /= static_cast<double>(betas.size());
    return mean;
}

Vector mean_hyperplane_score(const HyperplaneSet& set, const Matrix& z) {
    const Vector mean = mean_hyperplane(set.betas);
    Vector scores(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) scores[i] = hyperplane_score(z.row(i), mean);
    return scores;
}

}  // namespace invalign
