#pragma once

// End-to-end training for SA-FAS and its ablation arms, the per-epoch
// held-out evaluation, last-k reporting, hyperparameter sweeps and the
// snapshot correlation study.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "invalign/encoder.hpp"
#include "invalign/pgirm.hpp"
#include "invalign/worldgen.hpp"

namespace invalign {

enum class Method {
    Erm,           // one hyperplane, mean per-domain risk
    ErmSupCon,     // Erm + λ·SupCon
    IrmV1,         // one hyperplane, risk + λ_irm·gradient penalty
    PgIrm,         // per-domain hyperplanes with interpolation
    SaFas,         // PgIrm + λ·SupCon
    PerDomainErm,  // per-domain hyperplanes, plain SGD (PgIrm without projection)
};

std::string_view method_name(Method m) noexcept;
/// Accepts the names printed by method_name(); throws std::invalid_argument.
Method parse_method(std::string_view name);
bool uses_domain_hyperplanes(Method m) noexcept;
bool uses_supcon(Method m) noexcept;

struct TrainConfig {
    Method method = Method::SaFas;
    double lr = 5e-3;
    double alpha = 0.995;
    double lambda_sep = 0.1;
    double lambda_irm = 1.0;
    double tau = 0.1;
    std::size_t warmup_epochs = 20;
    std::size_t epochs = 100;
    std::vector<std::size_t> lr_decay_epochs{40, 80};
    double lr_decay_factor = 0.5;
    double weight_decay = 5e-4;
    std::size_t batch_per_domain = 96;
    double aug_sigma = 0.05;
    std::vector<std::size_t> hidden_dims{64, 64};
    std::size_t embed_dim = 16;
    bool hyperplane_bias = false;
    double beta_init_std = 0.01;
    std::size_t last_k = 10;
    std::uint64_t seed = 0;

    void validate() const;
    /// Learning rate in effect during `epoch` (0-based).
    double lr_at(std::size_t epoch) const noexcept;
};

/// Held-out metrics of one snapshot.
struct MetricRecord {
    double auc = 0.0;
    double hter = 0.0;
    double tpr_at_fpr05 = 0.0;
    double s_sep = 0.0;
    double s_align = 0.0;
    std::optional<double> s_cos;  // absent with a single hyperplane

    friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_risk = 0.0;
    double loss_sep = 0.0;
    double loss_penalty = 0.0;
    MetricRecord test;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct Stat {
    double mean = 0.0;
    double std = 0.0;  // population

    friend bool operator==(const Stat&, const Stat&) = default;
};

struct RunSummary {
    std::size_t window = 0;  // number of trailing epochs summarized
    Stat auc, hter, tpr_at_fpr05, s_sep, s_align, loss_total;
    std::optional<Stat> s_cos;
    std::optional<double> final_s_cos;

    friend bool operator==(const RunSummary&, const RunSummary&) = default;
};

struct RunRecord {
    Method method = Method::SaFas;
    std::uint64_t seed = 0;
    std::size_t held_out = 0;
    std::vector<EpochRecord> epochs;
    std::optional<std::string> failure;  // set when the run aborted

    bool completed() const noexcept { return !failure.has_value(); }

    friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

struct TrainResult {
    MlpEncoder encoder;
    HyperplaneSet hyperplanes;
    RunRecord record;
};

/// Called after every completed epoch with the current state.
using EpochObserver =
    std::function<void(const EpochRecord&, const MlpEncoder&, const HyperplaneSet&)>;

/// Stratified mini-batch size actually used for a training set: the
/// configured size, capped by the smallest domain, with a floor of 16, and
/// rounded down to an even count.
std::size_t effective_batch_per_domain(const TrainConfig& cfg, const DomainDataset& train);

/// Runs the configured method. A non-finite loss or gradient ends the run
/// early with record.failure set; invalid configurations throw.
TrainResult train(const DomainDataset& train_data, const DomainDataset& test_data,
                  const TrainConfig& cfg, const EpochObserver& observer = {});
TrainResult train(const LeaveOneOutSplit& split, const TrainConfig& cfg,
                  const EpochObserver& observer = {});

/// Embeds `test`, scores with the mean hyperplane, computes every metric.
MetricRecord evaluate(const MlpEncoder& enc, const HyperplaneSet& set, const DomainDataset& test);

/// Mean and population std over the trailing min(k, epochs) entries.
RunSummary summarize_last_k(const RunRecord& record, std::size_t k = 10);

enum class SweepAxis { Alpha, Gamma, WarmupEpochs };

std::string_view axis_name(SweepAxis a) noexcept;
SweepAxis parse_axis(std::string_view name);
/// Copy of `base` with the axis set to `value`.
TrainConfig with_axis_value(const TrainConfig& base, SweepAxis axis, double value);

struct SweepRow {
    double value = 0.0;
    RunRecord record;
    RunSummary summary;
};

/// One independent run per value (same seed, same split), rows sorted by
/// value. Runs execute on up to `threads` workers.
std::vector<SweepRow> sweep(const LeaveOneOutSplit& split, const TrainConfig& base,
                            SweepAxis axis, std::span<const double> values,
                            std::size_t threads = 1);

struct CorrelationResult {
    std::size_t snapshots = 0;
    double align_vs_auc = 0.0;
    double sep_vs_auc = 0.0;
};

/// Pools every epoch snapshot of the given runs and rank-correlates S_align
/// and S_sep with AUC. Needs at least 10 snapshots.
CorrelationResult correlation_study(std::span<const RunRecord> records);

/// Runs `jobs` tasks on up to `threads` workers; task i writes its own slot.
void run_parallel(std::size_t jobs, std::size_t threads,
                  const std::function<void(std::size_t)>& task);

}  // namespace invalign
