#include "invalign/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "invalign/io.hpp"
#include "invalign/metrics.hpp"
#include "invalign/trainer.hpp"
#include "invalign/worldgen.hpp"
#include "json_codec.hpp"

namespace fs = std::filesystem;

namespace invalign {
namespace {

using detail::Json;

struct Experiment {
    std::optional<WorldSpec> world;
    std::optional<fs::path> data;
    std::optional<std::size_t> protocol;  // empty = every domain in turn
    TrainConfig train;
    fs::path out = "runs";
    std::vector<std::uint64_t> seeds;
};

Experiment load_experiment(const fs::path& path) {
    const Json j = detail::parse_json(read_text_file(path), path.string());
    detail::require_keys(j, {"world", "data", "protocol", "train", "out", "seeds"}, "config");
    Experiment exp;
    try {
        if (j.contains("world")) exp.world = detail::world_spec_from(j.at("world"));
        if (j.contains("data")) {
            fs::path p = j.at("data").get<std::string>();
            exp.data = p.is_relative() ? path.parent_path() / p : p;
        }
        if (j.contains("protocol")) {
            const Json& p = j.at("protocol");
            if (p.is_string() && p.get<std::string>() == "all") {
                exp.protocol.reset();
            } else if (p.is_number_unsigned()) {
                exp.protocol = p.get<std::size_t>();
            } else {
                throw std::invalid_argument("protocol: expected a domain index or \"all\"");
            }
        }
        if (j.contains("train")) exp.train = detail::train_config_from(j.at("train"));
        if (j.contains("out")) exp.out = j.at("out").get<std::string>();
        if (j.contains("seeds")) {
            for (const auto& s : j.at("seeds")) {
                if (!s.is_number_unsigned()) {
                    throw std::invalid_argument("seeds: expected non-negative integers");
                }
                exp.seeds.push_back(s.get<std::uint64_t>());
            }
        }
    } catch (const Json::exception& e) {
        throw std::invalid_argument("config: " + std::string(e.what()));
    }
    if (exp.seeds.empty()) exp.seeds.push_back(exp.train.seed);
    if (std::set<std::uint64_t>(exp.seeds.begin(), exp.seeds.end()).size() != exp.seeds.size()) {
        throw std::invalid_argument("config: seeds must be distinct");
    }
    return exp;
}

DomainDataset load_data(const Experiment& exp) {
    if (exp.data) return read_csv(*exp.data);
    if (exp.world) return generate_world(*exp.world);
    throw std::invalid_argument("config: needs either \"world\" or \"data\"");
}

std::vector<std::size_t> held_out_domains(const Experiment& exp, const DomainDataset& data) {
    if (exp.protocol) {
        if (*exp.protocol >= data.num_domains()) {
            throw std::invalid_argument("protocol: held-out domain " + std::to_string(*exp.protocol) +
                                        " does not exist");
        }
        return {*exp.protocol};
    }
    std::vector<std::size_t> all(data.num_domains());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
}

std::size_t thread_budget() {
    const char* env = std::getenv("INVALIGN_THREADS");
    if (env == nullptr || *env == '\0') return 1;
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1) {
        throw std::invalid_argument("INVALIGN_THREADS must be a positive integer");
    }
    return static_cast<std::size_t>(n);
}

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string exact(double v) { return fmt("%.17g", v); }

std::string run_name(Method m, std::size_t held_out, std::uint64_t seed) {
    std::string name(method_name(m));
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return name + "_heldout" + std::to_string(held_out) + "_seed" + std::to_string(seed);
}

void print_epoch(std::ostream& os, const EpochRecord& r) {
    os << "epoch " << r.epoch << "  lr " << fmt("%.4g", r.lr) << "  loss "
       << fmt("%.6f", r.loss_total) << "  auc " << fmt("%.4f", r.test.auc) << "  hter "
       << fmt("%.4f", r.test.hter) << "  tpr@fpr5 " << fmt("%.4f", r.test.tpr_at_fpr05)
       << "  s_sep " << fmt("%.4f", r.test.s_sep) << "  s_align " << fmt("%.4f", r.test.s_align)
       << "  s_cos " << (r.test.s_cos ? fmt("%.6f", *r.test.s_cos) : std::string("-")) << '\n';
}

void print_summary(std::ostream& os, const RunSummary& s) {
    auto pm = [](const Stat& st) { return fmt("%.4f", st.mean) + " +/- " + fmt("%.4f", st.std); };
    os << "last " << s.window << " epochs: AUC " << pm(s.auc) << "  HTER " << pm(s.hter)
       << "  TPR@FPR5% " << pm(s.tpr_at_fpr05) << "  final S_cos "
       << (s.final_s_cos ? fmt("%.6f", *s.final_s_cos) : std::string("-")) << '\n';
}

/// Mean/std for a table row: a single run reports its own last-k statistics,
/// several runs report the mean and population std of their last-k means.
struct Aggregate {
    std::size_t runs = 0;
    Stat auc, hter, tpr, s_sep, s_align;
    std::optional<double> final_s_cos;
};

Aggregate aggregate(const std::vector<RunSummary>& summaries) {
    Aggregate a;
    a.runs = summaries.size();
    if (summaries.empty()) return a;
    if (summaries.size() == 1) {
        const auto& s = summaries.front();
        a.auc = s.auc;
        a.hter = s.hter;
        a.tpr = s.tpr_at_fpr05;
        a.s_sep = s.s_sep;
        a.s_align = s.s_align;
        a.final_s_cos = s.final_s_cos;
        return a;
    }
    auto across = [&](auto get) {
        const double n = static_cast<double>(summaries.size());
        double mean = 0.0;
        for (const auto& s : summaries) mean += get(s);
        mean /= n;
        double var = 0.0;
        for (const auto& s : summaries) var += (get(s) - mean) * (get(s) - mean);
        return Stat{mean, std::sqrt(var / n)};
    };
    a.auc = across([](const RunSummary& s) { return s.auc.mean; });
    a.hter = across([](const RunSummary& s) { return s.hter.mean; });
    a.tpr = across([](const RunSummary& s) { return s.tpr_at_fpr05.mean; });
    a.s_sep = across([](const RunSummary& s) { return s.s_sep.mean; });
    a.s_align = across([](const RunSummary& s) { return s.s_align.mean; });
    if (std::all_of(summaries.begin(), summaries.end(),
                    [](const RunSummary& s) { return s.final_s_cos.has_value(); })) {
        a.final_s_cos = across([](const RunSummary& s) { return *s.final_s_cos; }).mean;
    }
    return a;
}

const char* kAggregateHeader =
    "runs,auc_mean,auc_std,hter_mean,hter_std,tpr_at_fpr05_mean,tpr_at_fpr05_std,"
    "s_sep_mean,s_sep_std,s_align_mean,s_align_std,final_s_cos";

std::string aggregate_cells(const Aggregate& a) {
    std::string row = std::to_string(a.runs);
    if (a.runs == 0) return row + ",,,,,,,,,,,";
    for (const Stat* s : {&a.auc, &a.hter, &a.tpr, &a.s_sep, &a.s_align}) {
        row += "," + exact(s->mean) + "," + exact(s->std);
    }
    row += "," + (a.final_s_cos ? exact(*a.final_s_cos) : std::string());
    return row;
}

// ---- generate ---------------------------------------------------------------

int cmd_generate(const fs::path& config, std::optional<std::uint64_t> seed,
                 std::optional<fs::path> out_dir, std::ostream& out) {
    const Experiment exp = load_experiment(config);
    if (!exp.world) throw std::invalid_argument("config: generate needs a \"world\" section");
    WorldSpec spec = *exp.world;
    if (seed) spec.seed = *seed;
    const fs::path dir = out_dir.value_or(exp.out);
    fs::create_directories(dir);
    const DomainDataset data = generate_world(spec);
    write_csv(data, dir / "data.csv");
    Json manifest{{"world", detail::to_json_value(spec)},
                  {"seed", spec.seed},
                  {"rows", data.size()},
                  {"data", "data.csv"},
                  {"bayes_auc_invariant", bayes_auc_invariant(spec)}};
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
    out << "wrote " << data.size() << " rows to " << (dir / "data.csv").string() << '\n';
    return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct RunOutcome {
    RunRecord record;
    std::optional<RunSummary> summary;
};

RunOutcome run_one(const Experiment& exp, const LeaveOneOutSplit& split, const TrainConfig& cfg,
                   const fs::path& dir, std::ostream& os) {
    fs::create_directories(dir);
    os << "run " << dir.filename().string() << " (" << method_name(cfg.method) << ", held-out "
       << split.held_out << ", seed " << cfg.seed << ")\n";
    TrainResult res = train(split, cfg, [&](const EpochRecord& r, const MlpEncoder&,
                                            const HyperplaneSet&) { print_epoch(os, r); });

    Json resolved{{"protocol", split.held_out}, {"train", detail::to_json_value(cfg)}};
    if (exp.world) resolved["world"] = detail::to_json_value(*exp.world);
    if (exp.data) resolved["data"] = fs::absolute(*exp.data).lexically_normal().string();
    write_text_file(dir / "config.json", resolved.dump(2) + "\n");
    write_text_file(dir / "record.jsonl", run_record_to_jsonl(res.record, cfg.last_k));
    write_text_file(dir / "checkpoint.txt",
                    checkpoint_to_text({res.encoder, res.hyperplanes, cfg.seed,
                                        res.record.epochs.size()}));

    RunOutcome outcome{res.record, std::nullopt};
    if (!res.record.epochs.empty()) {
        outcome.summary = summarize_last_k(res.record, cfg.last_k);
    }
    if (res.record.failure) {
        os << "run diverged: " << *res.record.failure << '\n';
    } else if (outcome.summary) {
        print_summary(os, *outcome.summary);
    }
    return outcome;
}

int cmd_train(const fs::path& config, std::optional<std::uint64_t> seed,
              std::optional<fs::path> out_dir, std::ostream& out, std::ostream& err) {
    Experiment exp = load_experiment(config);
    if (seed) exp.seeds = {*seed};
    exp.train.validate();
    const DomainDataset data = load_data(exp);
    const fs::path root = out_dir.value_or(exp.out);

    struct Job {
        std::size_t split;
        TrainConfig cfg;
        fs::path dir;
    };
    std::vector<LeaveOneOutSplit> splits;
    std::vector<Job> jobs;
    for (std::size_t h : held_out_domains(exp, data)) {
        splits.push_back(leave_one_out(data, h));
        for (std::uint64_t s : exp.seeds) {
            TrainConfig cfg = exp.train;
            cfg.seed = s;
            jobs.push_back({splits.size() - 1, cfg, root / run_name(cfg.method, h, s)});
        }
    }

    const std::size_t threads = thread_budget();
    std::vector<std::ostringstream> logs(jobs.size());
    std::vector<RunOutcome> outcomes(jobs.size());
    run_parallel(jobs.size(), threads, [&](std::size_t i) {
        std::ostream& os = threads > 1 ? static_cast<std::ostream&>(logs[i]) : out;
        outcomes[i] = run_one(exp, splits[jobs[i].split], jobs[i].cfg, jobs[i].dir, os);
    });
    if (threads > 1) {
        for (const auto& log : logs) out << log.str();
    }

    int status = kExitOk;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (outcomes[i].record.failure) {
            err << "error: run " << jobs[i].dir.string() << " diverged: "
                << *outcomes[i].record.failure << '\n';
            status = kExitNumerical;
        }
    }
    return status;
}

// ---- sweep ------------------------------------------------------------------

int cmd_sweep(const fs::path& config, const std::string& axis_text,
              const std::vector<double>& values, std::optional<std::uint64_t> seed,
              std::optional<fs::path> out_dir, std::ostream& out, std::ostream& err) {
    Experiment exp = load_experiment(config);
    if (seed) exp.seeds = {*seed};
    const SweepAxis axis = parse_axis(axis_text);
    if (values.empty()) throw std::invalid_argument("sweep: --values is empty");
    const DomainDataset data = load_data(exp);
    const std::size_t threads = thread_budget();

    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::vector<RunSummary>> per_value(sorted.size());
    std::vector<std::size_t> failed(sorted.size(), 0);
    int status = kExitOk;
    for (std::size_t h : held_out_domains(exp, data)) {
        const LeaveOneOutSplit split = leave_one_out(data, h);
        for (std::uint64_t s : exp.seeds) {
            TrainConfig base = exp.train;
            base.seed = s;
            const auto rows = sweep(split, base, axis, sorted, threads);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (rows[i].record.completed()) {
                    per_value[i].push_back(rows[i].summary);
                } else {
                    ++failed[i];
                    status = kExitNumerical;
                    err << "error: " << axis_name(axis) << "=" << exact(rows[i].value)
                        << " held-out " << h << " seed " << s
                        << " diverged: " << *rows[i].record.failure << '\n';
                }
            }
        }
    }

    std::string table = std::string("axis,value,") + kAggregateHeader + ",failed\n";
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        table += std::string(axis_name(axis)) + "," + exact(sorted[i]) + "," +
                 aggregate_cells(aggregate(per_value[i])) + "," + std::to_string(failed[i]) + "\n";
    }
    out << table;
    if (out_dir) {
        fs::create_directories(*out_dir);
        write_text_file(*out_dir / ("sweep_" + std::string(axis_name(axis)) + ".csv"), table);
    }
    return status;
}

// ---- report -----------------------------------------------------------------

int cmd_report(const std::vector<fs::path>& dirs, bool correlate, std::optional<fs::path> out_dir,
               std::ostream& out) {
    std::map<Method, std::vector<RunSummary>> by_method;
    std::vector<RunRecord> records;
    for (const auto& dir : dirs) {
        const fs::path file = dir / "record.jsonl";
        if (!fs::exists(file)) {
            throw std::invalid_argument("incomplete run directory '" + dir.string() +
                                        "': no record.jsonl");
        }
        ParsedRun run = run_record_from_jsonl(read_text_file(file));
        if (!run.record.completed() || !run.summary) {
            throw std::invalid_argument("incomplete run directory '" + dir.string() +
                                        "': the run did not complete");
        }
        by_method[run.record.method].push_back(*run.summary);
        records.push_back(std::move(run.record));
    }

    std::string table = std::string("method,") + kAggregateHeader + "\n";
    for (const auto& [method, summaries] : by_method) {
        table += std::string(method_name(method)) + "," + aggregate_cells(aggregate(summaries)) + "\n";
    }
    out << table;
    std::string corr_table;
    if (correlate) {
        const CorrelationResult c = correlation_study(records);
        corr_table = "snapshots,spearman_s_align_auc,spearman_s_sep_auc\n" +
                     std::to_string(c.snapshots) + "," + exact(c.align_vs_auc) + "," +
                     exact(c.sep_vs_auc) + "\n";
        out << '\n' << corr_table;
    }
    if (out_dir) {
        fs::create_directories(*out_dir);
        write_text_file(*out_dir / "report.csv", table);
        if (correlate) write_text_file(*out_dir / "correlation.csv", corr_table);
    }
    return kExitOk;
}

// ---- evaluate ---------------------------------------------------------------

int cmd_evaluate(const fs::path& checkpoint, const fs::path& data_path,
                 std::optional<std::size_t> domain, std::ostream& out) {
    const Checkpoint ckpt = checkpoint_from_text(read_text_file(checkpoint));
    DomainDataset data = read_csv(data_path);
    if (data.dim() != ckpt.encoder.input_dim()) {
        throw std::invalid_argument("evaluate: data has " + std::to_string(data.dim()) +
                                    " features but the checkpoint expects " +
                                    std::to_string(ckpt.encoder.input_dim()));
    }
    if (domain) {
        if (*domain >= data.num_domains()) {
            throw std::invalid_argument("evaluate: domain " + std::to_string(*domain) +
                                        " does not exist");
        }
        data = leave_one_out(data, *domain).test;
    }
    out << metric_record_to_json(evaluate(ckpt.encoder, ckpt.hyperplanes, data)) << '\n';
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Domain-invariant live/spoof training on synthetic multi-domain worlds", "invalign"};
    app.require_subcommand(1);

    fs::path config;
    std::optional<std::uint64_t> seed;
    std::optional<fs::path> out_dir;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "Experiment config (JSON)")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "Override the seed(s) in the config");
        sub->add_option("--out", out_dir, "Output directory");
    };

    auto* generate = app.add_subcommand("generate", "Sample a world and write data.csv + manifest.json");
    add_common(generate);

    auto* train_cmd = app.add_subcommand("train", "Train one run per held-out domain and seed");
    add_common(train_cmd);

    auto* sweep_cmd = app.add_subcommand("sweep", "One run per value of a hyperparameter");
    add_common(sweep_cmd);
    std::string axis;
    std::vector<double> values;
    sweep_cmd->add_option("--axis", axis, "alpha, gamma or ta")
        ->required()
        ->check(CLI::IsMember({"alpha", "gamma", "ta"}));
    sweep_cmd->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');

    auto* report = app.add_subcommand("report", "Aggregate finished run directories");
    std::vector<fs::path> run_dirs;
    bool correlate = false;
    report->add_option("runs", run_dirs, "Run directories")->required();
    report->add_flag("--correlate", correlate, "Rank-correlate S_align and S_sep with AUC");
    report->add_option("--out", out_dir, "Write report.csv (and correlation.csv) here");

    auto* eval_cmd = app.add_subcommand("evaluate", "Score a dataset with a saved checkpoint");
    fs::path checkpoint, data_path;
    std::optional<std::size_t> domain;
    eval_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", data_path, "Dataset CSV")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--domain", domain, "Restrict to one domain");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    try {
        if (generate->parsed()) return cmd_generate(config, seed, out_dir, out);
        if (train_cmd->parsed()) return cmd_train(config, seed, out_dir, out, err);
        if (sweep_cmd->parsed()) return cmd_sweep(config, axis, values, seed, out_dir, out, err);
        if (report->parsed()) return cmd_report(run_dirs, correlate, out_dir, out);
        if (eval_cmd->parsed()) return cmd_evaluate(checkpoint, data_path, domain, out);
    } catch (const NumericalError& e) {
        err << "error: numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace invalign
