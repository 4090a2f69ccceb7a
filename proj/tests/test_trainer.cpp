#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "invalign/metrics.hpp"
#include "invalign/trainer.hpp"
#include "test_support.hpp"

using namespace invalign;

namespace {

LeaveOneOutSplit small_split(std::size_t domains = 3, double sigma = 1.0, double spurious = 0.0,
                             std::uint64_t seed = 1) {
    const auto spec = make_standard_world(4, domains, 40, 2.0, sigma, 1.0, spurious,
                                          spurious > 0 ? std::optional<std::size_t>(domains - 1)
                                                       : std::nullopt,
                                          seed);
    return leave_one_out(generate_world(spec), domains - 1);
}

TrainConfig small_config(Method m) {
    TrainConfig cfg;
    cfg.method = m;
    cfg.epochs = 6;
    cfg.warmup_epochs = 2;
    cfg.lr_decay_epochs = {4};
    cfg.hidden_dims = {16};
    cfg.embed_dim = 8;
    cfg.batch_per_domain = 16;
    cfg.lr = 0.05;
    cfg.seed = 3;
    return cfg;
}

struct Trajectory {
    std::vector<MlpEncoder> encoders;
    std::vector<HyperplaneSet> hyperplanes;
    RunRecord record;
};

Trajectory trace(const LeaveOneOutSplit& split, const TrainConfig& cfg) {
    Trajectory t;
    t.record = train(split, cfg, [&](const EpochRecord&, const MlpEncoder& enc, const HyperplaneSet& h) {
                   t.encoders.push_back(enc);
                   t.hyperplanes.push_back(h);
               }).record;
    return t;
}

bool same_metrics(const std::vector<EpochRecord>& a, const std::vector<EpochRecord>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(a[i].test == b[i].test) || a[i].loss_total != b[i].loss_total ||
            a[i].loss_risk != b[i].loss_risk) {
            return false;
        }
    }
    return true;
}

RunRecord synthetic_record(const std::vector<double>& aucs) {
    RunRecord r;
    for (std::size_t i = 0; i < aucs.size(); ++i) {
        EpochRecord e;
        e.epoch = i;
        e.test.auc = aucs[i];
        e.test.hter = 1.0 - aucs[i];
        e.test.s_cos = 0.5;
        r.epochs.push_back(e);
    }
    return r;
}

}  // namespace

TEST_CASE("methods: names round-trip") {
    for (Method m : {Method::Erm, Method::ErmSupCon, Method::IrmV1, Method::PgIrm, Method::SaFas,
                     Method::PerDomainErm}) {
        CHECK(parse_method(method_name(m)) == m);
    }
    CHECK_THROWS_AS(parse_method("SAFAS"), std::invalid_argument);
    CHECK(uses_domain_hyperplanes(Method::SaFas));
    CHECK_FALSE(uses_domain_hyperplanes(Method::IrmV1));
    CHECK(uses_supcon(Method::ErmSupCon));
    CHECK_FALSE(uses_supcon(Method::PgIrm));
}

TEST_CASE("TrainConfig: defaults, schedule and validation") {
    TrainConfig cfg;
    CHECK(cfg.lr == 5e-3);
    CHECK(cfg.alpha == 0.995);
    CHECK(cfg.lambda_sep == 0.1);
    CHECK(cfg.warmup_epochs == 20);
    CHECK(cfg.epochs == 100);
    CHECK(cfg.weight_decay == 5e-4);
    CHECK(cfg.batch_per_domain == 96);
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.lr_at(0) == 5e-3);
    CHECK(cfg.lr_at(39) == 5e-3);
    CHECK(cfg.lr_at(40) == 2.5e-3);
    CHECK(cfg.lr_at(80) == 1.25e-3);
    CHECK(cfg.lr_at(99) == 1.25e-3);

    auto bad = [](auto mutate) {
        TrainConfig c;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    };
    bad([](TrainConfig& c) { c.alpha = 1.5; });
    bad([](TrainConfig& c) { c.alpha = -0.1; });
    bad([](TrainConfig& c) { c.lr = 0.0; });
    bad([](TrainConfig& c) { c.tau = 0.0; });
    bad([](TrainConfig& c) { c.warmup_epochs = 100; });
    bad([](TrainConfig& c) { c.lambda_sep = -1.0; });
    bad([](TrainConfig& c) { c.embed_dim = 0; });
}

TEST_CASE("effective_batch_per_domain: capped, floored and even") {
    const auto split = small_split();
    TrainConfig cfg;
    CHECK(effective_batch_per_domain(cfg, split.train) == 80);
    cfg.batch_per_domain = 4;
    CHECK(effective_batch_per_domain(cfg, split.train) == 16);
    cfg.batch_per_domain = 33;
    CHECK(effective_batch_per_domain(cfg, split.train) == 32);
}

TEST_CASE("train: ERM loss falls monotonically on a separable one-domain world") {
    const auto split = small_split(2, 0.0);
    REQUIRE(split.train.num_domains() == 1);
    TrainConfig cfg = small_config(Method::Erm);
    cfg.epochs = 10;
    const auto rec = train(split, cfg).record;
    REQUIRE(rec.epochs.size() == 10);
    for (std::size_t t = 1; t < 10; ++t) CHECK(rec.epochs[t].loss_total < rec.epochs[t - 1].loss_total);
}

TEST_CASE("train: converged separable run scores its own training data") {
    const auto split = small_split(2, 0.0);
    TrainConfig cfg = small_config(Method::Erm);
    cfg.epochs = 30;
    const auto res = train(split, cfg);
    CHECK(evaluate(res.encoder, res.hyperplanes, split.train).auc >= 0.99);
    CHECK(summarize_last_k(res.record).auc.mean >= 0.99);
}

TEST_CASE("train: same seed gives a bit-identical record") {
    const auto split = small_split();
    for (Method m : {Method::SaFas, Method::IrmV1}) {
        const auto cfg = small_config(m);
        CHECK(train(split, cfg).record == train(split, cfg).record);
        auto other = cfg;
        other.seed = 4;
        CHECK_FALSE(train(split, cfg).record == train(split, other).record);
    }
}

TEST_CASE("train: one record entry per epoch with bounded diagnostics") {
    const auto split = small_split();
    const auto rec = train(split, small_config(Method::SaFas)).record;
    REQUIRE(rec.epochs.size() == 6);
    CHECK(rec.completed());
    for (std::size_t t = 0; t < 6; ++t) {
        CHECK(rec.epochs[t].epoch == t);
        REQUIRE(rec.epochs[t].test.s_cos.has_value());
        CHECK(std::abs(*rec.epochs[t].test.s_cos) <= 1.0);
        CHECK(rec.epochs[t].loss_sep > 0.0);
    }
    CHECK(rec.epochs[3].lr == 0.05);
    CHECK(rec.epochs[4].lr == 0.025);
    const auto erm = train(split, small_config(Method::Erm)).record;
    CHECK_FALSE(erm.epochs[0].test.s_cos.has_value());
}

TEST_CASE("reduction: SA-FAS with lambda 0 is PG-IRM") {
    const auto split = small_split();
    auto safas = small_config(Method::SaFas);
    safas.lambda_sep = 0.0;
    const auto a = trace(split, safas);
    const auto b = trace(split, small_config(Method::PgIrm));
    CHECK(a.encoders == b.encoders);
    CHECK(a.hyperplanes == b.hyperplanes);
    CHECK(same_metrics(a.record.epochs, b.record.epochs));
}

TEST_CASE("reduction: PG-IRM with alpha 1 is per-domain SGD") {
    const auto split = small_split();
    auto pg = small_config(Method::PgIrm);
    pg.alpha = 1.0;
    auto plain = small_config(Method::PerDomainErm);
    plain.alpha = 1.0;
    const auto a = trace(split, pg);
    const auto b = trace(split, plain);
    CHECK(a.encoders == b.encoders);
    CHECK(a.hyperplanes == b.hyperplanes);
}

TEST_CASE("reduction: IRM-v1 with lambda 0 is ERM") {
    const auto split = small_split();
    auto irm = small_config(Method::IrmV1);
    irm.lambda_irm = 0.0;
    const auto a = trace(split, irm);
    const auto b = trace(split, small_config(Method::Erm));
    CHECK(a.encoders == b.encoders);
    CHECK(a.hyperplanes == b.hyperplanes);
    CHECK(same_metrics(a.record.epochs, b.record.epochs));
}

TEST_CASE("reduction: alpha gate keeps warm-up epochs identical to alpha 1") {
    const auto split = small_split();
    auto gated = small_config(Method::SaFas);
    gated.alpha = 0.9;
    auto free = gated;
    free.alpha = 1.0;
    const auto a = trace(split, gated);
    const auto b = trace(split, free);
    for (std::size_t t = 0; t <= gated.warmup_epochs; ++t) {
        CHECK(a.encoders[t] == b.encoders[t]);
        CHECK(a.hyperplanes[t].betas == b.hyperplanes[t].betas);
    }
    CHECK_FALSE(a.hyperplanes[gated.warmup_epochs + 1].betas == b.hyperplanes[gated.warmup_epochs + 1].betas);
}

TEST_CASE("train: alignment methods need two training domains") {
    const auto split = small_split(2);
    CHECK_THROWS_AS(train(split, small_config(Method::SaFas)), std::invalid_argument);
    CHECK_THROWS_AS(train(split, small_config(Method::PgIrm)), std::invalid_argument);
    CHECK_NOTHROW(train(split, small_config(Method::PerDomainErm)));
}

TEST_CASE("train: divergence is recorded, not thrown") {
    const auto split = small_split();
    auto cfg = small_config(Method::Erm);
    cfg.lr = 1e300;
    const auto rec = train(split, cfg).record;
    CHECK_FALSE(rec.completed());
    CHECK(rec.epochs.size() < cfg.epochs);
    CHECK(rec.failure->find("epoch") != std::string::npos);
}

TEST_CASE("evaluate: identical hyperplanes and label flips") {
    const auto split = small_split();
    const auto res = train(split, small_config(Method::Erm));
    HyperplaneSet twin = res.hyperplanes;
    twin.betas.push_back(twin.betas[0]);
    const auto single = evaluate(res.encoder, res.hyperplanes, split.test);
    const auto doubled = evaluate(res.encoder, twin, split.test);
    CHECK(doubled.auc == single.auc);
    CHECK(doubled.hter == single.hter);
    CHECK(doubled.tpr_at_fpr05 == single.tpr_at_fpr05);
    CHECK(doubled.s_align == doctest::Approx(single.s_align).epsilon(1e-14));
    CHECK(*doubled.s_cos == doctest::Approx(1.0));

    const auto flipped = evaluate(res.encoder, res.hyperplanes, split.test.with_flipped_labels());
    CHECK(flipped.auc == doctest::Approx(1.0 - single.auc).epsilon(1e-14));
    CHECK_THROWS_AS(evaluate(res.encoder, res.hyperplanes, DomainDataset()), std::invalid_argument);
}

TEST_CASE("summarize_last_k") {
    const auto constant = synthetic_record(std::vector<double>(15, 0.7));
    const auto s = summarize_last_k(constant, 10);
    CHECK(s.window == 10);
    CHECK(s.auc.mean == doctest::Approx(0.7));
    CHECK(s.auc.std == doctest::Approx(0.0));

    const auto r = synthetic_record({0.1, 0.5, 0.9});
    CHECK(summarize_last_k(r, 1).auc.mean == 0.9);
    CHECK(summarize_last_k(r, 10).window == 3);

    Rng rng(1);
    std::vector<double> values(25);
    for (double& v : values) v = rng.uniform();
    const auto rec = synthetic_record(values);
    const auto got = summarize_last_k(rec, 10);
    double mean = 0.0;
    for (std::size_t i = 15; i < 25; ++i) mean += values[i];
    mean /= 10;
    double var = 0.0;
    for (std::size_t i = 15; i < 25; ++i) var += (values[i] - mean) * (values[i] - mean);
    CHECK(got.auc.mean == doctest::Approx(mean).epsilon(1e-14));
    CHECK(got.auc.std == doctest::Approx(std::sqrt(var / 10)).epsilon(1e-12));
    CHECK(got.hter.mean == doctest::Approx(1.0 - mean).epsilon(1e-14));
    REQUIRE(got.s_cos.has_value());
    CHECK(*got.final_s_cos == 0.5);

    CHECK_THROWS_AS(summarize_last_k(RunRecord{}, 10), std::invalid_argument);
}

TEST_CASE("sweep: single value equals one train call, deterministic, sorted") {
    const auto split = small_split();
    const auto base = small_config(Method::SaFas);
    const std::vector<double> one{0.995};
    const auto rows = sweep(split, base, SweepAxis::Alpha, one);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].record == train(split, base).record);

    const std::vector<double> values{0.9, 0.5, 1.0};
    const auto a = sweep(split, base, SweepAxis::Alpha, values, 1);
    const auto b = sweep(split, base, SweepAxis::Alpha, values, 3);
    REQUIRE(a.size() == 3);
    CHECK(a[0].value == 0.5);
    CHECK(a[1].value == 0.9);
    CHECK(a[2].value == 1.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(a[i].record == b[i].record);
    CHECK_THROWS_AS(sweep(split, base, SweepAxis::Alpha, std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("sweep: axes map onto the config") {
    const TrainConfig base;
    CHECK(with_axis_value(base, SweepAxis::Alpha, 0.5).alpha == 0.5);
    CHECK(with_axis_value(base, SweepAxis::Gamma, 0.01).lr == 0.01);
    CHECK(with_axis_value(base, SweepAxis::WarmupEpochs, 7).warmup_epochs == 7);
    CHECK_THROWS_AS(with_axis_value(base, SweepAxis::WarmupEpochs, 2.5), std::invalid_argument);
    CHECK(parse_axis("ta") == SweepAxis::WarmupEpochs);
    CHECK(parse_axis("gamma") == SweepAxis::Gamma);
    CHECK_THROWS_AS(parse_axis("beta"), std::invalid_argument);
}

TEST_CASE("sweep: without alignment the hyperplanes do not converge") {
    const auto split = small_split(3, 1.0, 0.0, 5);
    auto base = small_config(Method::SaFas);
    base.epochs = 20;
    base.warmup_epochs = 5;
    base.lr_decay_epochs = {};
    const std::vector<double> values{0.9, 1.0};
    const auto rows = sweep(split, base, SweepAxis::Alpha, values);
    const double aligned = *rows[0].summary.final_s_cos;
    const double free = *rows[1].summary.final_s_cos;
    CHECK(aligned > 0.999);
    CHECK(free < 0.99);
}

TEST_CASE("correlation_study") {
    std::vector<double> aucs(100);
    for (std::size_t i = 0; i < 100; ++i) aucs[i] = 0.5 + 0.004 * static_cast<double>(i);
    auto rec = synthetic_record(aucs);
    for (std::size_t i = 0; i < 100; ++i) {
        rec.epochs[i].test.s_align = std::exp(aucs[i]);
        rec.epochs[i].test.s_sep = -aucs[i];
    }
    const std::vector<RunRecord> runs{rec};
    const auto c = correlation_study(runs);
    CHECK(c.snapshots == 100);
    CHECK(c.align_vs_auc == doctest::Approx(1.0));
    CHECK(c.sep_vs_auc == doctest::Approx(-1.0));

    Rng rng(2);
    std::vector<std::size_t> perm(100);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    auto shuffled = rec;
    for (std::size_t i = 0; i < 100; ++i) shuffled.epochs[i].test.s_align = std::exp(aucs[perm[i]]);
    const std::vector<RunRecord> shuffled_runs{shuffled};
    CHECK(std::abs(correlation_study(shuffled_runs).align_vs_auc) < 0.3);

    const std::vector<RunRecord> tiny{synthetic_record({0.1, 0.2, 0.3})};
    CHECK_THROWS_AS(correlation_study(tiny), std::invalid_argument);
}

TEST_CASE("run_parallel: every slot written, first error rethrown") {
    std::vector<int> out(50, 0);
    run_parallel(50, 4, [&](std::size_t i) { out[i] = static_cast<int>(i) * 2; });
    for (int i = 0; i < 50; ++i) CHECK(out[i] == 2 * i);
    CHECK_THROWS_AS(run_parallel(10, 3,
                                 [](std::size_t i) {
                                     if (i == 7) throw std::runtime_error("boom");
                                 }),
                    std::runtime_error);
}
