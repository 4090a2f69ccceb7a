#include "invalign/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "invalign/losses.hpp"
#include "invalign/metrics.hpp"

namespace invalign {

std::string_view method_name(Method m) noexcept {
    switch (m) {
        case Method::Erm: return "ERM";
        case Method::ErmSupCon: return "ERM_SUPCON";
        case Method::IrmV1: return "IRM_V1";
        case Method::PgIrm: return "PG_IRM";
        case Method::SaFas: return "SA_FAS";
        case Method::PerDomainErm: return "PER_DOMAIN_ERM";
    }
    return "?";
}

Method parse_method(std::string_view name) {
    for (Method m : {Method::Erm, Method::ErmSupCon, Method::IrmV1, Method::PgIrm, Method::SaFas,
                     Method::PerDomainErm}) {
        if (method_name(m) == name) return m;
    }
    throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

bool uses_domain_hyperplanes(Method m) noexcept {
    return m == Method::PgIrm || m == Method::SaFas || m == Method::PerDomainErm;
}

bool uses_supcon(Method m) noexcept { return m == Method::ErmSupCon || m == Method::SaFas; }

void TrainConfig::validate() const {
    auto bad = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
    if (!(lr > 0.0)) bad("lr must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) bad("alpha must lie in [0, 1]");
    if (!(lambda_sep >= 0.0)) bad("lambda_sep must be non-negative");
    if (!(lambda_irm >= 0.0)) bad("lambda_irm must be non-negative");
    if (!(tau > 0.0)) bad("tau must be positive");
    if (epochs == 0) bad("epochs must be positive");
    if (uses_domain_hyperplanes(method) && method != Method::PerDomainErm &&
        warmup_epochs >= epochs) {
        bad("warmup_epochs (T_a) must be smaller than epochs");
    }
    if (!(lr_decay_factor > 0.0)) bad("lr_decay_factor must be positive");
    if (!(weight_decay >= 0.0)) bad("weight_decay must be non-negative");
    if (batch_per_domain < 2) bad("batch_per_domain must be at least 2");
    if (!(aug_sigma >= 0.0)) bad("aug_sigma must be non-negative");
    if (embed_dim == 0) bad("embed_dim must be positive");
    for (auto h : hidden_dims) {
        if (h == 0) bad("hidden layer widths must be positive");
    }
    if (!(beta_init_std >= 0.0)) bad("beta_init_std must be non-negative");
    if (last_k == 0) bad("last_k must be positive");
}

double TrainConfig::lr_at(std::size_t epoch) const noexcept {
    double rate = lr;
    for (auto d : lr_decay_epochs) {
        if (epoch >= d) rate *= lr_decay_factor;
    }
    return rate;
}

std::size_t effective_batch_per_domain(const TrainConfig& cfg, const DomainDataset& train) {
    std::size_t smallest = train.size();
    for (std::size_t e = 0; e < train.num_domains(); ++e) {
        smallest = std::min(smallest, train.domain_size(e));
    }
    std::size_t b = std::min(cfg.batch_per_domain, smallest);
    b = std::max<std::size_t>(b, 16);
    return b - b % 2;
}

namespace {

/// Cycles through shuffled (domain, label) pools, reshuffling each pool when
/// it runs out.
class StratifiedSampler {
public:
    StratifiedSampler(const DomainDataset& data, std::size_t per_class, Rng rng)
        : per_class_(per_class), rng_(rng) {
        for (std::size_t e = 0; e < data.num_domains(); ++e) {
            for (int label : {kLive, kSpoof}) {
                Pool p{data.indices_of(e, label), 0};
                rng_.shuffle(p.rows);
                pools_.push_back(std::move(p));
            }
        }
    }

    std::vector<std::size_t> next() {
        std::vector<std::size_t> rows;
        rows.reserve(pools_.size() * per_class_);
        for (auto& p : pools_) {
            for (std::size_t k = 0; k < per_class_; ++k) {
                if (p.cursor == p.rows.size()) {
                    rng_.shuffle(p.rows);
                    p.cursor = 0;
                }
                rows.push_back(p.rows[p.cursor++]);
            }
        }
        return rows;
    }

private:
    struct Pool {
        std::vector<std::size_t> rows;
        std::size_t cursor;
    };
    std::size_t per_class_;
    Rng rng_;
    std::vector<Pool> pools_;
};

struct Views {
    Matrix x;
    std::vector<int> y;
    std::vector<std::size_t> e;
};

/// Two jittered views per sampled row, interleaved (2i, 2i+1).
Views make_views(const DomainDataset& data, const std::vector<std::size_t>& rows, double sigma,
                 Rng& rng) {
    const std::size_t d = data.dim();
    Views v{Matrix(2 * rows.size(), d), {}, {}};
    v.y.reserve(2 * rows.size());
    v.e.reserve(2 * rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = data.features().row(rows[i]);
        for (std::size_t view = 0; view < 2; ++view) {
            auto dst = v.x.row(2 * i + view);
            for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] + sigma * rng.normal();
            v.y.push_back(data.labels()[rows[i]]);
            v.e.push_back(data.domains()[rows[i]]);
        }
    }
    return v;
}

LossOutput method_loss(const TrainConfig& cfg, const AugmentedBatch& batch,
                       const HyperplaneSet& set, std::size_t num_domains) {
    switch (cfg.method) {
        case Method::Erm:
            return erm_loss(batch, set.betas[0], num_domains);
        case Method::ErmSupCon: {
            LossOutput out = erm_loss(batch, set.betas[0], num_domains);
            const LossOutput sep = supcon_loss(batch, cfg.tau);
            out.value += cfg.lambda_sep * sep.value;
            out.sep = sep.value;
            auto dz = out.dL_dz.data();
            auto ds = sep.dL_dz.data();
            for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += cfg.lambda_sep * ds[i];
            return out;
        }
        case Method::IrmV1:
            return irm_v1_loss(batch, set.betas[0], cfg.lambda_irm, num_domains);
        case Method::PgIrm:
        case Method::PerDomainErm:
            return align_loss(batch, set.betas);
        case Method::SaFas:
            return sa_fas_loss(batch, set.betas, cfg.lambda_sep, cfg.tau);
    }
    throw std::logic_error("unhandled method");
}

}  // namespace

TrainResult train(const DomainDataset& train_data, const DomainDataset& test_data,
                  const TrainConfig& cfg, const EpochObserver& observer) {
    cfg.validate();
    if (train_data.size() == 0) throw std::invalid_argument("train: empty training set");
    if (test_data.size() == 0) throw std::invalid_argument("train: empty test set");
    if (train_data.dim() != test_data.dim()) {
        throw std::invalid_argument("train: training and test features differ in width");
    }
    const std::size_t num_domains = train_data.num_domains();
    if ((cfg.method == Method::PgIrm || cfg.method == Method::SaFas) && num_domains < 2) {
        throw std::invalid_argument("train: " + std::string(method_name(cfg.method)) +
                                    " needs at least two training domains");
    }

    const Rng root(cfg.seed);
    std::vector<std::size_t> dims{train_data.dim()};
    dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
    dims.push_back(cfg.embed_dim);

    TrainResult res;
    res.encoder = MlpEncoder(dims);
    init(res.encoder, root.derive(Stream::Init));
    const std::size_t heads = uses_domain_hyperplanes(cfg.method) ? num_domains : 1;
    const std::size_t beta_dim = cfg.embed_dim + (cfg.hyperplane_bias ? 1 : 0);
    res.hyperplanes = init_hyperplanes(heads, beta_dim, root, cfg.beta_init_std);
    res.hyperplanes.alpha = cfg.alpha;
    res.hyperplanes.warmup_epochs = cfg.warmup_epochs;
    res.record.method = cfg.method;
    res.record.seed = cfg.seed;

    const std::size_t batch = effective_batch_per_domain(cfg, train_data);
    std::size_t largest = 0;
    for (std::size_t e = 0; e < num_domains; ++e) {
        largest = std::max(largest, train_data.domain_size(e));
    }
    const std::size_t steps = (largest + batch - 1) / batch;
    StratifiedSampler sampler(train_data, batch / 2, root.derive(Stream::Batching));
    Rng aug_rng = root.derive(Stream::Augmentation);
    const bool project = cfg.method == Method::PgIrm || cfg.method == Method::SaFas;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        std::size_t step = 0;
        try {
            for (; step < steps; ++step) {
                Views views = make_views(train_data, sampler.next(), cfg.aug_sigma, aug_rng);
                ForwardResult fw = forward(res.encoder, views.x);
                const AugmentedBatch ab{std::move(fw.z), std::move(views.y), std::move(views.e)};
                const LossOutput loss = method_loss(cfg, ab, res.hyperplanes, num_domains);
                if (!std::isfinite(loss.value)) throw NumericalError("non-finite loss");

                const GradBuffer grads = backward(res.encoder, fw.cache, loss.dL_dz);
                std::vector<Vector> beta_grads = loss.dL_dbeta;
                for (std::size_t e = 0; e < beta_grads.size(); ++e) {
                    const auto& beta = res.hyperplanes.betas[e];
                    for (std::size_t j = 0; j < beta.size(); ++j) {
                        beta_grads[e][j] += cfg.weight_decay * beta[j];
                    }
                }
                res.hyperplanes = project
                                      ? pg_irm_update(res.hyperplanes, beta_grads, lr, epoch)
                                      : sgd_update(res.hyperplanes, beta_grads, lr, epoch);
                sgd_step(res.encoder, grads, lr, cfg.weight_decay);

                rec.loss_total += loss.value;
                rec.loss_risk += loss.risk;
                rec.loss_sep += loss.sep;
                rec.loss_penalty += loss.penalty;
            }
            const double n = static_cast<double>(steps);
            rec.loss_total /= n;
            rec.loss_risk /= n;
            rec.loss_sep /= n;
            rec.loss_penalty /= n;
            rec.test = evaluate(res.encoder, res.hyperplanes, test_data);
        } catch (const NumericalError& err) {
            res.record.failure = "epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step) + ": " + err.what();
            break;
        }
        res.record.epochs.push_back(rec);
        if (observer) observer(rec, res.encoder, res.hyperplanes);
    }
    return res;
}

TrainResult train(const LeaveOneOutSplit& split, const TrainConfig& cfg,
                  const EpochObserver& observer) {
    TrainResult res = train(split.train, split.test, cfg, observer);
    res.record.held_out = split.held_out;
    return res;
}

MetricRecord evaluate(const MlpEncoder& enc, const HyperplaneSet& set, const DomainDataset& test) {
    if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
    const Matrix z = embed(enc, test.features());
    ScoredSet scored{mean_hyperplane_score(set, z), test.labels()};
    MetricRecord m;
    m.auc = auc(scored);
    m.hter = hter(scored);
    m.tpr_at_fpr05 = tpr_at_fpr(scored, 0.05);
    m.s_sep = s_sep(z, test.labels());
    m.s_align = s_align(set.betas, z, test.labels());
    if (set.size() >= 2) m.s_cos = s_cos(set);
    return m;
}

namespace {

template <typename Get>
Stat stat_of(std::span<const EpochRecord> window, Get get) {
    const double n = static_cast<double>(window.size());
    double mean = 0.0;
    for (const auto& r : window) mean += get(r);
    mean /= n;
    double var = 0.0;
    for (const auto& r : window) {
        const double d = get(r) - mean;
        var += d * d;
    }
    return {mean, std::sqrt(var / n)};
}

}  // namespace

RunSummary summarize_last_k(const RunRecord& record, std::size_t k) {
    if (record.epochs.empty()) throw std::invalid_argument("summarize_last_k: empty record");
    const std::size_t n = std::clamp<std::size_t>(k, 1, record.epochs.size());
    const std::span<const EpochRecord> window(record.epochs.data() + record.epochs.size() - n, n);
    RunSummary s;
    s.window = n;
    s.auc = stat_of(window, [](const EpochRecord& r) { return r.test.auc; });
    s.hter = stat_of(window, [](const EpochRecord& r) { return r.test.hter; });
    s.tpr_at_fpr05 = stat_of(window, [](const EpochRecord& r) { return r.test.tpr_at_fpr05; });
    s.s_sep = stat_of(window, [](const EpochRecord& r) { return r.test.s_sep; });
    s.s_align = stat_of(window, [](const EpochRecord& r) { return r.test.s_align; });
    s.loss_total = stat_of(window, [](const EpochRecord& r) { return r.loss_total; });
    const bool have_cos = std::all_of(window.begin(), window.end(),
                                      [](const EpochRecord& r) { return r.test.s_cos.has_value(); });
    if (have_cos) {
        s.s_cos = stat_of(window, [](const EpochRecord& r) { return *r.test.s_cos; });
    }
    s.final_s_cos = record.epochs.back().test.s_cos;
    return s;
}

std::string_view axis_name(SweepAxis a) noexcept {
    switch (a) {
        case SweepAxis::Alpha: return "alpha";
        case SweepAxis::Gamma: return "gamma";
        case SweepAxis::WarmupEpochs: return "ta";
    }
    return "?";
}

SweepAxis parse_axis(std::string_view name) {
    for (SweepAxis a : {SweepAxis::Alpha, SweepAxis::Gamma, SweepAxis::WarmupEpochs}) {
        if (axis_name(a) == name) return a;
    }
    throw std::invalid_argument("unknown sweep axis '" + std::string(name) +
                                "' (expected alpha, gamma or ta)");
}

TrainConfig with_axis_value(const TrainConfig& base, SweepAxis axis, double value) {
    TrainConfig cfg = base;
    switch (axis) {
        case SweepAxis::Alpha:
            cfg.alpha = value;
            break;
        case SweepAxis::Gamma:
            cfg.lr = value;
            break;
        case SweepAxis::WarmupEpochs:
            if (!(value >= 0.0) || value != std::floor(value)) {
                throw std::invalid_argument("sweep: T_a values must be non-negative integers");
            }
            cfg.warmup_epochs = static_cast<std::size_t>(value);
            break;
    }
    return cfg;
}

void run_parallel(std::size_t jobs, std::size_t threads,
                  const std::function<void(std::size_t)>& task) {
    if (threads <= 1 || jobs <= 1) {
        for (std::size_t i = 0; i < jobs; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    const std::size_t workers = std::min(threads, jobs);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < jobs; i = next++) {
                try {
                    task(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::vector<SweepRow> sweep(const LeaveOneOutSplit& split, const TrainConfig& base,
                            SweepAxis axis, std::span<const double> values, std::size_t threads) {
    if (values.empty()) throw std::invalid_argument("sweep: no values given");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<TrainConfig> configs;
    for (double v : sorted) {
        configs.push_back(with_axis_value(base, axis, v));
        configs.back().validate();
    }
    std::vector<SweepRow> rows(sorted.size());
    run_parallel(rows.size(), threads, [&](std::size_t i) {
        rows[i].value = sorted[i];
        rows[i].record = train(split, configs[i]).record;
        if (!rows[i].record.epochs.empty()) {
            rows[i].summary = summarize_last_k(rows[i].record, configs[i].last_k);
        }
    });
    return rows;
}

CorrelationResult correlation_study(std::span<const RunRecord> records) {
    Vector auc_values, align_values, sep_values;
    for (const auto& r : records) {
        for (const auto& e : r.epochs) {
            auc_values.push_back(e.test.auc);
            align_values.push_back(e.test.s_align);
            sep_values.push_back(e.test.s_sep);
        }
    }
    if (auc_values.size() < 10) {
        throw std::invalid_argument("correlation_study: need at least 10 snapshots, got " +
                                    std::to_string(auc_values.size()));
    }
    CorrelationResult c;
    c.snapshots = auc_values.size();
    c.align_vs_auc = spearman(align_values, auc_values);
    c.sep_vs_auc = spearman(sep_values, auc_values);
    return c;
}

}  // namespace invalign
