#include "invalign/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace invalign {

void AugmentedBatch::validate_pairing() const {
    if (y.size() != z.rows() || e.size() != z.rows()) {
        throw std::invalid_argument("augmented batch: z, y and e differ in length");
    }
    if (z.rows() % 2 != 0) throw std::invalid_argument("augmented batch: odd number of views");
    for (std::size_t i = 0; i < y.size(); i += 2) {
        if (y[i] != y[i + 1] || e[i] != e[i + 1]) {
            throw std::invalid_argument("augmented batch: views " + std::to_string(i) + " and " +
                                        std::to_string(i + 1) + " disagree on label or domain");
        }
    }
}

double hyperplane_score(std::span<const double> z, std::span<const double> beta) {
    if (beta.size() == z.size()) return dot(z, beta);
    if (beta.size() == z.size() + 1) return dot(z, beta.first(z.size())) + beta.back();
    throw std::invalid_argument("hyperplane of length " + std::to_string(beta.size()) +
                                " does not fit embeddings of width " + std::to_string(z.size()));
}

namespace {

void check_beta(std::span<const double> beta, std::size_t m) {
    if (beta.size() != m && beta.size() != m + 1) {
        throw std::invalid_argument("hyperplane of length " + std::to_string(beta.size()) +
                                    " does not fit embeddings of width " + std::to_string(m));
    }
}

/// Per-domain risk pieces before any 1/E weighting.
struct RiskTerms {
    double value = 0.0;
    Vector dbeta;   // ∇_β R^e
    Vector resid;   // (σ_i − y_i) per row
    Vector slope;   // σ_i(1 − σ_i) per row
};

RiskTerms risk_terms(const Matrix& z, std::span<const int> y, std::span<const std::size_t> rows,
                     std::span<const double> beta) {
    const std::size_t m = z.cols();
    const bool bias = beta.size() == m + 1;
    const double n = static_cast<double>(rows.size());
    RiskTerms t;
    t.dbeta.assign(beta.size(), 0.0);
    t.resid.resize(rows.size());
    t.slope.resize(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto zi = z.row(rows[k]);
        const double s = hyperplane_score(zi, beta);
        const double label = static_cast<double>(y[rows[k]]);
        const double sig = sigmoid(s);
        t.value += softplus(s) - label * s;
        const double r = sig - label;
        t.resid[k] = r;
        t.slope[k] = sig * (1.0 - sig);
        for (std::size_t j = 0; j < m; ++j) t.dbeta[j] += r * zi[j];
        if (bias) t.dbeta[m] += r;
    }
    t.value /= n;
    for (double& g : t.dbeta) g /= n;
    return t;
}

std::vector<std::vector<std::size_t>> rows_by_domain(const AugmentedBatch& batch,
                                                     std::size_t num_domains) {
    if (batch.y.size() != batch.z.rows() || batch.e.size() != batch.z.rows()) {
        throw std::invalid_argument("batch: z, y and e differ in length");
    }
    if (num_domains == 0) throw std::invalid_argument("batch: need at least one domain");
    std::vector<std::vector<std::size_t>> rows(num_domains);
    for (std::size_t i = 0; i < batch.e.size(); ++i) {
        if (batch.e[i] >= num_domains) {
            throw std::invalid_argument("batch: row " + std::to_string(i) + " has domain " +
                                        std::to_string(batch.e[i]) + " but only " +
                                        std::to_string(num_domains) + " domains were given");
        }
        rows[batch.e[i]].push_back(i);
    }
    for (std::size_t d = 0; d < num_domains; ++d) {
        if (rows[d].empty()) {
            throw std::invalid_argument("batch: domain " + std::to_string(d) + " has no rows");
        }
    }
    return rows;
}

/// Shared body of ERM and IRM-v1 so that λ = 0 reproduces ERM exactly.
LossOutput shared_hyperplane_loss(const AugmentedBatch& batch, std::span<const double> beta,
                                  std::size_t num_domains, const double* lambda_irm) {
    const std::size_t m = batch.z.cols();
    check_beta(beta, m);
    const auto rows = rows_by_domain(batch, num_domains);
    const bool bias = beta.size() == m + 1;

    LossOutput out;
    out.dL_dz = Matrix(batch.z.rows(), m);
    out.dL_dbeta.assign(1, Vector(beta.size(), 0.0));
    auto& dbeta = out.dL_dbeta[0];

    for (std::size_t d = 0; d < num_domains; ++d) {
        const auto& idx = rows[d];
        const RiskTerms t = risk_terms(batch.z, batch.y, idx, beta);
        const double n = static_cast<double>(idx.size());
        if (!lambda_irm) {
            out.value += t.value;
            out.risk += t.value;
            for (std::size_t j = 0; j < beta.size(); ++j) dbeta[j] += t.dbeta[j];
            for (std::size_t k = 0; k < idx.size(); ++k) {
                auto dz = out.dL_dz.row(idx[k]);
                const double c = t.resid[k] / n;
                for (std::size_t j = 0; j < m; ++j) dz[j] += c * beta[j];
            }
            continue;
        }

        const double lam = *lambda_irm;
        const Vector& g = t.dbeta;
        const double penalty = dot(g, g);
        // Hessian of R^e times g: (1/n) Σ σ'_i (z̃_i·g) z̃_i
        Vector hg(beta.size(), 0.0);
        Vector proj(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto zi = batch.z.row(idx[k]);
            double zg = dot(zi, std::span<const double>(g).first(m));
            if (bias) zg += g[m];
            proj[k] = zg;
            const double w = t.slope[k] * zg;
            for (std::size_t j = 0; j < m; ++j) hg[j] += w * zi[j];
            if (bias) hg[m] += w;
        }
        out.value += t.value + lam * penalty;
        out.risk += t.value;
        out.penalty += penalty;
        for (std::size_t j = 0; j < beta.size(); ++j) {
            dbeta[j] += t.dbeta[j] + lam * (2.0 * hg[j] / n);
        }
        for (std::size_t k = 0; k < idx.size(); ++k) {
            auto dz = out.dL_dz.row(idx[k]);
            const double c = t.resid[k] / n;
            const double pr = 2.0 / n;
            for (std::size_t j = 0; j < m; ++j) {
                const double dpen = pr * (t.resid[k] * g[j] + t.slope[k] * proj[k] * beta[j]);
                dz[j] += c * beta[j] + lam * dpen;
            }
        }
    }
    const double num = static_cast<double>(num_domains);
    out.value /= num;
    out.risk /= num;
    out.penalty /= num;
    for (double& g : dbeta) g /= num;
    for (double& v : out.dL_dz.data()) v /= num;
    return out;
}

}  // namespace

LossOutput env_risk(const Matrix& z_e, std::span<const int> y_e, std::span<const double> beta_e) {
    if (z_e.rows() == 0) throw std::invalid_argument("env_risk: empty batch");
    if (y_e.size() != z_e.rows()) throw std::invalid_argument("env_risk: label count mismatch");
    check_beta(beta_e, z_e.cols());
    std::vector<std::size_t> rows(z_e.rows());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    const RiskTerms t = risk_terms(z_e, y_e, rows, beta_e);

    LossOutput out;
    out.value = t.value;
    out.risk = t.value;
    out.dL_dz = Matrix(z_e.rows(), z_e.cols());
    const double n = static_cast<double>(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto dz = out.dL_dz.row(i);
        for (std::size_t j = 0; j < z_e.cols(); ++j) dz[j] = t.resid[i] / n * beta_e[j];
    }
    out.dL_dbeta.push_back(t.dbeta);
    return out;
}

LossOutput supcon_loss(const AugmentedBatch& batch, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("supcon_loss: temperature must be positive");
    const std::size_t n = batch.z.rows();
    if (batch.y.size() != n || batch.e.size() != n) {
        throw std::invalid_argument("supcon_loss: z, y and e differ in length");
    }
    if (n < 2) throw std::invalid_argument("supcon_loss: need at least two rows");

    const Matrix gram = matmul_nt(batch.z, batch.z);
    Matrix coef(n, n);  // ∂L/∂(z_i·z_t / τ)
    LossOutput out;
    Vector logits;
    logits.reserve(n - 1);
    std::vector<std::size_t> positives;
    for (std::size_t i = 0; i < n; ++i) {
        logits.clear();
        positives.clear();
        for (std::size_t t = 0; t < n; ++t) {
            if (t == i) continue;
            logits.push_back(gram(i, t) / tau);
            if (batch.y[t] == batch.y[i] && batch.e[t] == batch.e[i]) positives.push_back(t);
        }
        if (positives.empty()) {
            throw std::invalid_argument("supcon_loss: anchor " + std::to_string(i) +
                                        " has no positive; use stratified batches with at least "
                                        "two views per (label, domain)");
        }
        const double lse = stable_logsumexp(logits);
        const double inv_pos = 1.0 / static_cast<double>(positives.size());
        double pos_mean = 0.0;
        for (auto j : positives) pos_mean += gram(i, j) / tau;
        out.value += lse - pos_mean * inv_pos;

        auto crow = coef.row(i);
        for (std::size_t t = 0, k = 0; t < n; ++t) {
            if (t == i) continue;
            crow[t] = std::exp(logits[k++] - lse);
        }
        for (auto j : positives) crow[j] -= inv_pos;
    }

    // dL/dz = (C + Cᵀ) Z / τ
    Matrix sym(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < n; ++t) sym(i, t) = (coef(i, t) + coef(t, i)) / tau;
    out.dL_dz = matmul(sym, batch.z);
    out.sep = out.value;
    if (!std::isfinite(out.value)) throw NumericalError("supcon_loss: non-finite value");
    return out;
}

LossOutput erm_loss(const AugmentedBatch& batch, std::span<const double> beta,
                    std::size_t num_domains) {
    return shared_hyperplane_loss(batch, beta, num_domains, nullptr);
}

LossOutput irm_v1_loss(const AugmentedBatch& batch, std::span<const double> beta,
                       double lambda_irm, std::size_t num_domains) {
    if (!(lambda_irm >= 0.0)) throw std::invalid_argument("irm_v1_loss: λ_irm must be >= 0");
    return shared_hyperplane_loss(batch, beta, num_domains, &lambda_irm);
}

LossOutput align_loss(const AugmentedBatch& batch, std::span<const Vector> betas) {
    const std::size_t m = batch.z.cols();
    const auto rows = rows_by_domain(batch, betas.size());
    LossOutput out;
    out.dL_dz = Matrix(batch.z.rows(), m);
    const double num = static_cast<double>(betas.size());
    for (std::size_t d = 0; d < betas.size(); ++d) {
        check_beta(betas[d], m);
        const auto& idx = rows[d];
        const RiskTerms t = risk_terms(batch.z, batch.y, idx, betas[d]);
        const double n = static_cast<double>(idx.size());
        out.value += t.value;
        Vector g = t.dbeta;
        for (double& v : g) v /= num;
        out.dL_dbeta.push_back(std::move(g));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            auto dz = out.dL_dz.row(idx[k]);
            const double c = t.resid[k] / n;
            for (std::size_t j = 0; j < m; ++j) dz[j] += c * betas[d][j] / num;
        }
    }
    out.value /= num;
    out.risk = out.value;
    return out;
}

LossOutput sa_fas_loss(const AugmentedBatch& batch, std::span<const Vector> betas, double lambda,
                       double tau) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("sa_fas_loss: λ must be >= 0");
    LossOutput out = align_loss(batch, betas);
    const LossOutput sep = supcon_loss(batch, tau);
    out.value += lambda * sep.value;
    out.sep = sep.value;
    auto dz = out.dL_dz.data();
    auto ds = sep.dL_dz.data();
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += lambda * ds[i];
    return out;
}

}  // namespace invalign
