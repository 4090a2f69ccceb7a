#pragma once

// Projected-gradient IRM: one hyperplane per training domain, pulled toward
// each other by interpolating with the farthest peer once the warm-up epochs
// are over.
//
// The optimal set Ω_e of each domain is represented by the current β_e
// alone. Membership in the α-adjacency set is therefore
//   max_{e'≠e} ‖v − β_e'‖ ≤ α · max_{e'≠e} ‖β_e − β_e'‖.

#include <cstddef>
#include <span>
#include <vector>

#include "invalign/numkit.hpp"

namespace invalign {

struct HyperplaneSet {
    std::vector<Vector> betas;
    double alpha = 0.995;
    /// Interpolation is active for epochs t > warmup_epochs (T_a).
    std::size_t warmup_epochs = 20;
    /// Epoch of the most recent update.
    std::size_t epoch = 0;

    std::size_t size() const noexcept { return betas.size(); }
    std::size_t dim() const noexcept { return betas.empty() ? 0 : betas.front().size(); }
    void validate() const;

    friend bool operator==(const HyperplaneSet&, const HyperplaneSet&) = default;
};

/// `count` hyperplanes of length `dim`, entries N(0, stddev²); hyperplane e
/// draws from rng.derive(Stream::Hyperplanes, e).
HyperplaneSet init_hyperplanes(std::size_t count, std::size_t dim, const Rng& rng,
                               double stddev = 0.01);

struct FarthestPeer {
    std::size_t index = 0;
    double distance = 0.0;
};

/// argmax over e' ≠ e of ‖candidate − β_e'‖; ties go to the lowest index.
FarthestPeer farthest(const HyperplaneSet& set, std::size_t e, std::span<const double> candidate);

/// weight·candidate + (1 − weight)·peer, weight ∈ [0, 1].
Vector project_interpolate(std::span<const double> candidate, std::span<const double> peer,
                           double weight);

struct AdjacencyReport {
    std::size_t farthest = 0;       // ē for β_e itself
    double farthest_distance = 0.0;  // max_{e'≠e} ‖β_e − β_e'‖
    double radius = 0.0;             // α · farthest_distance
    double worst_distance = 0.0;     // max_{e'≠e} ‖v − β_e'‖
    bool member = false;             // worst_distance ≤ radius
};

AdjacencyReport adjacency_membership(const HyperplaneSet& set, std::size_t e,
                                     std::span<const double> v);

/// α' = 1 − 1[t > T_a](1 − α).
double effective_alpha(const HyperplaneSet& set, std::size_t epoch) noexcept;

/// One PG-IRM step at epoch t. Every candidate β̃_e = β_e − γ·grad_e is
/// formed first; each is then interpolated with the farthest pre-update peer
/// β^t_ē. A single hyperplane is plain SGD.
HyperplaneSet pg_irm_update(const HyperplaneSet& set, std::span<const Vector> grads, double lr,
                            std::size_t epoch);

/// Plain β_e ← β_e − γ·grad_e for every domain, no interpolation.
HyperplaneSet sgd_update(const HyperplaneSet& set, std::span<const Vector> grads, double lr,
                         std::size_t epoch);

/// Mean cosine over unordered pairs of distinct hyperplanes.
double s_cos(const HyperplaneSet& set);

/// Elementwise mean of the hyperplanes.
Vector mean_hyperplane(std::span<const Vector> betas);

/// z · mean(β), i.e. the average of the per-domain scores.
Vector mean_hyperplane_score(const HyperplaneSet& set, const Matrix& z);

}  // namespace invalign
