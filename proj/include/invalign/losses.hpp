#pragma once

// Differentiable objectives on embeddings. Every loss returns its value with
// gradients w.r.t. the embedding rows and w.r.t. each hyperplane it uses.
//
// A hyperplane is a vector of length m (no bias) or m + 1, in which case the
// last entry is a bias added to the score: score(z) = β[0:m]·z + β[m].

#include <cstddef>
#include <span>
#include <vector>

#include "invalign/numkit.hpp"

namespace invalign {

/// Two views per source sample: rows 2i and 2i+1 share label and domain.
struct AugmentedBatch {
    Matrix z;
    std::vector<int> y;
    std::vector<std::size_t> e;

    std::size_t size() const noexcept { return y.size(); }
    /// Throws std::invalid_argument if lengths differ or a view pair disagrees.
    void validate_pairing() const;
};

struct LossOutput {
    double value = 0.0;
    Matrix dL_dz;
    std::vector<Vector> dL_dbeta;

    // Unweighted components of `value`, for logging.
    double risk = 0.0;     // mean per-domain classification risk
    double sep = 0.0;      // SupCon value
    double penalty = 0.0;  // mean IRM-v1 gradient penalty
};

/// β·z (+ bias when β has m + 1 entries).
double hyperplane_score(std::span<const double> z, std::span<const double> beta);

/// Mean binary cross-entropy of σ(β·z) against y over the rows of one domain.
LossOutput env_risk(const Matrix& z_e, std::span<const int> y_e, std::span<const double> beta_e);

/// Supervised contrastive loss summed over anchors. Positives of anchor i are
/// the other rows with the same label and the same domain; the denominator
/// runs over every row except i.
LossOutput supcon_loss(const AugmentedBatch& batch, double tau);

/// (1/E) Σ_e R^e(β) with one shared hyperplane. Domains are 0..num_domains-1
/// and each must have rows in the batch.
LossOutput erm_loss(const AugmentedBatch& batch, std::span<const double> beta,
                    std::size_t num_domains);

/// (1/E) Σ_e [R^e(β) + λ‖∇_β R^e(β)‖²] with closed-form penalty gradients.
LossOutput irm_v1_loss(const AugmentedBatch& batch, std::span<const double> beta,
                       double lambda_irm, std::size_t num_domains);

/// (1/E) Σ_e R^e(β_e): one hyperplane per domain.
LossOutput align_loss(const AugmentedBatch& batch, std::span<const Vector> betas);

/// align_loss + λ·supcon_loss. SupCon contributes nothing to dL_dbeta.
LossOutput sa_fas_loss(const AugmentedBatch& batch, std::span<const Vector> betas, double lambda,
                       double tau);

}  // namespace invalign
