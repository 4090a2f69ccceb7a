#pragma once

// Synthetic multi-domain live/spoof worlds. Every domain shares one
// live→spoof transition direction; domains differ by an offset, and an
// optional spurious coordinate carries a label signal whose sign is reversed
// in one chosen domain.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "invalign/numkit.hpp"

namespace invalign {

inline constexpr int kLive = 0;
inline constexpr int kSpoof = 1;

struct WorldSpec {
    std::size_t input_dim = 8;
    std::size_t num_domains = 3;
    std::size_t n_per_domain_per_class = 500;
    Vector transition_dir;             // unit length, size input_dim
    std::vector<Vector> domain_offsets;  // num_domains vectors of size input_dim
    double class_gap = 2.0;
    double noise_sigma = 1.0;
    std::optional<std::size_t> spurious_dim;
    double spurious_strength = 0.0;
    std::optional<std::size_t> spurious_flip_domain;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument describing the first violated invariant.
    void validate() const;
};

/// Columnar (x, y, e) triples. Construction checks that every domain index is
/// below num_domains and that every domain holds both live and spoof samples.
class DomainDataset {
public:
    DomainDataset() = default;
    DomainDataset(Matrix features, std::vector<int> labels, std::vector<std::size_t> domains,
                  std::size_t num_domains);

    std::size_t size() const noexcept { return labels_.size(); }
    std::size_t dim() const noexcept { return features_.cols(); }
    std::size_t num_domains() const noexcept { return num_domains_; }

    const Matrix& features() const noexcept { return features_; }
    const std::vector<int>& labels() const noexcept { return labels_; }
    const std::vector<std::size_t>& domains() const noexcept { return domains_; }

    /// Row indices of samples with the given domain and label, in file order.
    std::vector<std::size_t> indices_of(std::size_t domain, int label) const;
    std::size_t domain_size(std::size_t domain) const;

    /// Copy of the dataset with every label inverted.
    DomainDataset with_flipped_labels() const;

    friend bool operator==(const DomainDataset&, const DomainDataset&) = default;

private:
    Matrix features_;
    std::vector<int> labels_;
    std::vector<std::size_t> domains_;
    std::size_t num_domains_ = 0;
};

struct LeaveOneOutSplit {
    DomainDataset train;  // domains re-densified to 0..E-2
    DomainDataset test;   // single domain, index 0
    std::size_t held_out = 0;
    /// train_domain_origin[k] = original index of training domain k.
    std::vector<std::size_t> train_domain_origin;
};

DomainDataset generate_world(const WorldSpec& spec);

/// AUC of x ↦ transition_dir·x with the spurious coordinate ignored:
/// Φ(class_gap / (σ√2)).
double bayes_auc_invariant(const WorldSpec& spec);

LeaveOneOutSplit leave_one_out(const DomainDataset& data, std::size_t held_out);

/// Header `domain,label,x0,...,x{d-1}`; values written with 17 significant
/// digits so a round trip is bit-exact.
void write_csv(const DomainDataset& data, const std::filesystem::path& path);
DomainDataset read_csv(const std::filesystem::path& path);

/// Convenience for configs: a spec with transition_dir = e_0, offsets drawn
/// on the non-signal coordinates with the given scale, spurious feature on
/// the last coordinate with strength `spurious_sigmas`·σ when positive.
WorldSpec make_standard_world(std::size_t input_dim, std::size_t num_domains,
                              std::size_t n_per_domain_per_class, double class_gap,
                              double noise_sigma, double offset_scale, double spurious_sigmas,
                              std::optional<std::size_t> spurious_flip_domain, std::uint64_t seed);

}  // namespace invalign
