#include "invalign/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <type_traits>

#include "json_codec.hpp"

namespace invalign {
namespace detail {

Json parse_json(std::string_view text, std::string_view what) {
    try {
        return Json::parse(text.begin(), text.end());
    } catch (const Json::parse_error& e) {
        throw std::invalid_argument(std::string(what) + ": " + e.what());
    }
}

void require_keys(const Json& j, std::initializer_list<std::string_view> allowed,
                  std::string_view what) {
    if (!j.is_object()) throw std::invalid_argument(std::string(what) + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (auto a : allowed) known = known || a == key;
        if (!known) {
            throw std::invalid_argument(std::string(what) + ": unknown key '" + key + "'");
        }
    }
}

namespace {

template <typename T>
T as(const Json& v, std::string_view what) {
    auto fail = [&](const char* expected) {
        throw std::invalid_argument(std::string(what) + ": expected " + expected);
    };
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) fail("a boolean");
        return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) fail("a string");
        return v.get<std::string>();
    } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) fail("a non-negative integer");
        return v.get<T>();
    } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) fail("a number");
        return v.get<double>();
    } else if constexpr (std::is_same_v<T, Vector>) {
        if (!v.is_array()) fail("an array of numbers");
        Vector out;
        for (const auto& x : v) out.push_back(as<double>(x, what));
        return out;
    } else {
        static_assert(std::is_same_v<T, std::vector<std::size_t>>);
        if (!v.is_array()) fail("an array of non-negative integers");
        std::vector<std::size_t> out;
        for (const auto& x : v) out.push_back(as<std::size_t>(x, what));
        return out;
    }
}

template <typename T>
void read(const Json& j, const char* key, T& dst) {
    if (auto it = j.find(key); it != j.end()) dst = as<T>(*it, key);
}

template <typename T>
void read(const Json& j, const char* key, std::optional<T>& dst) {
    if (auto it = j.find(key); it != j.end()) {
        if (it->is_null()) {
            dst.reset();
        } else {
            dst = as<T>(*it, key);
        }
    }
}

template <typename T>
Json optional_value(const std::optional<T>& v) {
    return v ? Json(*v) : Json(nullptr);
}

Json stat_value(const Stat& s) { return Json{{"mean", s.mean}, {"std", s.std}}; }

Stat stat_from(const Json& j, std::string_view what) {
    require_keys(j, {"mean", "std"}, what);
    Stat s;
    read(j, "mean", s.mean);
    read(j, "std", s.std);
    return s;
}

}  // namespace

Json to_json_value(const WorldSpec& spec) {
    Json offsets = Json::array();
    for (const auto& o : spec.domain_offsets) offsets.push_back(o);
    return Json{{"input_dim", spec.input_dim},
                {"num_domains", spec.num_domains},
                {"n_per_domain_per_class", spec.n_per_domain_per_class},
                {"transition_dir", spec.transition_dir},
                {"domain_offsets", offsets},
                {"class_gap", spec.class_gap},
                {"noise_sigma", spec.noise_sigma},
                {"spurious_dim", optional_value(spec.spurious_dim)},
                {"spurious_strength", spec.spurious_strength},
                {"spurious_flip_domain", optional_value(spec.spurious_flip_domain)},
                {"seed", spec.seed}};
}

WorldSpec world_spec_from(const Json& j) {
    if (!j.is_object()) throw std::invalid_argument("world: expected an object");
    WorldSpec spec;
    if (j.contains("preset")) {
        require_keys(j,
                     {"preset", "input_dim", "num_domains", "n_per_domain_per_class", "class_gap",
                      "noise_sigma", "offset_scale", "spurious_sigmas", "spurious_flip_domain",
                      "seed"},
                     "world");
        const auto preset = as<std::string>(j["preset"], "preset");
        if (preset != "standard") {
            throw std::invalid_argument("world: unknown preset '" + preset + "'");
        }
        double offset_scale = 1.0, spurious_sigmas = 0.0;
        read(j, "input_dim", spec.input_dim);
        read(j, "num_domains", spec.num_domains);
        read(j, "n_per_domain_per_class", spec.n_per_domain_per_class);
        read(j, "class_gap", spec.class_gap);
        read(j, "noise_sigma", spec.noise_sigma);
        read(j, "offset_scale", offset_scale);
        read(j, "spurious_sigmas", spurious_sigmas);
        read(j, "spurious_flip_domain", spec.spurious_flip_domain);
        read(j, "seed", spec.seed);
        spec = make_standard_world(spec.input_dim, spec.num_domains, spec.n_per_domain_per_class,
                                   spec.class_gap, spec.noise_sigma, offset_scale,
                                   spurious_sigmas, spec.spurious_flip_domain, spec.seed);
    } else {
        require_keys(j,
                     {"input_dim", "num_domains", "n_per_domain_per_class", "transition_dir",
                      "domain_offsets", "class_gap", "noise_sigma", "spurious_dim",
                      "spurious_strength", "spurious_flip_domain", "seed"},
                     "world");
        read(j, "input_dim", spec.input_dim);
        read(j, "num_domains", spec.num_domains);
        read(j, "n_per_domain_per_class", spec.n_per_domain_per_class);
        read(j, "transition_dir", spec.transition_dir);
        if (auto it = j.find("domain_offsets"); it != j.end()) {
            if (!it->is_array()) throw std::invalid_argument("domain_offsets: expected an array");
            for (const auto& o : *it) spec.domain_offsets.push_back(as<Vector>(o, "domain_offsets"));
        }
        read(j, "class_gap", spec.class_gap);
        read(j, "noise_sigma", spec.noise_sigma);
        read(j, "spurious_dim", spec.spurious_dim);
        read(j, "spurious_strength", spec.spurious_strength);
        read(j, "spurious_flip_domain", spec.spurious_flip_domain);
        read(j, "seed", spec.seed);
    }
    spec.validate();
    return spec;
}

Json to_json_value(const TrainConfig& cfg) {
    return Json{{"method", std::string(method_name(cfg.method))},
                {"lr", cfg.lr},
                {"alpha", cfg.alpha},
                {"lambda_sep", cfg.lambda_sep},
                {"lambda_irm", cfg.lambda_irm},
                {"tau", cfg.tau},
                {"warmup_epochs", cfg.warmup_epochs},
                {"epochs", cfg.epochs},
                {"lr_decay_epochs", cfg.lr_decay_epochs},
                {"lr_decay_factor", cfg.lr_decay_factor},
                {"weight_decay", cfg.weight_decay},
                {"batch_per_domain", cfg.batch_per_domain},
                {"aug_sigma", cfg.aug_sigma},
                {"hidden_dims", cfg.hidden_dims},
                {"embed_dim", cfg.embed_dim},
                {"hyperplane_bias", cfg.hyperplane_bias},
                {"beta_init_std", cfg.beta_init_std},
                {"last_k", cfg.last_k},
                {"seed", cfg.seed}};
}

TrainConfig train_config_from(const Json& j, const TrainConfig& base) {
    require_keys(j,
                 {"method", "lr", "alpha", "lambda_sep", "lambda_irm", "tau", "warmup_epochs",
                  "epochs", "lr_decay_epochs", "lr_decay_factor", "weight_decay",
                  "batch_per_domain", "aug_sigma", "hidden_dims", "embed_dim", "hyperplane_bias",
                  "beta_init_std", "last_k", "seed"},
                 "train");
    TrainConfig cfg = base;
    if (auto it = j.find("method"); it != j.end()) cfg.method = parse_method(as<std::string>(*it, "method"));
    read(j, "lr", cfg.lr);
    read(j, "alpha", cfg.alpha);
    read(j, "lambda_sep", cfg.lambda_sep);
    read(j, "lambda_irm", cfg.lambda_irm);
    read(j, "tau", cfg.tau);
    read(j, "warmup_epochs", cfg.warmup_epochs);
    read(j, "epochs", cfg.epochs);
    read(j, "lr_decay_epochs", cfg.lr_decay_epochs);
    read(j, "lr_decay_factor", cfg.lr_decay_factor);
    read(j, "weight_decay", cfg.weight_decay);
    read(j, "batch_per_domain", cfg.batch_per_domain);
    read(j, "aug_sigma", cfg.aug_sigma);
    read(j, "hidden_dims", cfg.hidden_dims);
    read(j, "embed_dim", cfg.embed_dim);
    read(j, "hyperplane_bias", cfg.hyperplane_bias);
    read(j, "beta_init_std", cfg.beta_init_std);
    read(j, "last_k", cfg.last_k);
    read(j, "seed", cfg.seed);
    cfg.validate();
    return cfg;
}

Json to_json_value(const MetricRecord& m) {
    return Json{{"auc", m.auc},       {"hter", m.hter},       {"tpr_at_fpr05", m.tpr_at_fpr05},
                {"s_sep", m.s_sep},   {"s_align", m.s_align}, {"s_cos", optional_value(m.s_cos)}};
}

Json to_json_value(const RunSummary& s) {
    return Json{{"window", s.window},
                {"auc", stat_value(s.auc)},
                {"hter", stat_value(s.hter)},
                {"tpr_at_fpr05", stat_value(s.tpr_at_fpr05)},
                {"s_sep", stat_value(s.s_sep)},
                {"s_align", stat_value(s.s_align)},
                {"loss_total", stat_value(s.loss_total)},
                {"s_cos", s.s_cos ? stat_value(*s.s_cos) : Json(nullptr)},
                {"final_s_cos", optional_value(s.final_s_cos)}};
}

namespace {

RunSummary summary_from(const Json& j) {
    require_keys(j,
                 {"window", "auc", "hter", "tpr_at_fpr05", "s_sep", "s_align", "loss_total",
                  "s_cos", "final_s_cos"},
                 "summary");
    RunSummary s;
    read(j, "window", s.window);
    s.auc = stat_from(j.at("auc"), "auc");
    s.hter = stat_from(j.at("hter"), "hter");
    s.tpr_at_fpr05 = stat_from(j.at("tpr_at_fpr05"), "tpr_at_fpr05");
    s.s_sep = stat_from(j.at("s_sep"), "s_sep");
    s.s_align = stat_from(j.at("s_align"), "s_align");
    s.loss_total = stat_from(j.at("loss_total"), "loss_total");
    if (const auto& c = j.at("s_cos"); !c.is_null()) s.s_cos = stat_from(c, "s_cos");
    read(j, "final_s_cos", s.final_s_cos);
    return s;
}

}  // namespace
}  // namespace detail

using detail::Json;

namespace {

template <typename F>
auto guarded(std::string_view what, F&& f) {
    try {
        return f();
    } catch (const Json::exception& e) {
        throw std::invalid_argument(std::string(what) + ": " + e.what());
    }
}

}  // namespace

std::string world_spec_to_json(const WorldSpec& spec) {
    return detail::to_json_value(spec).dump(2) + "\n";
}

WorldSpec world_spec_from_json(std::string_view text) {
    return guarded("world", [&] { return detail::world_spec_from(detail::parse_json(text, "world")); });
}

std::string train_config_to_json(const TrainConfig& cfg) {
    return detail::to_json_value(cfg).dump(2) + "\n";
}

TrainConfig train_config_from_json(std::string_view text) {
    return guarded("train", [&] { return detail::train_config_from(detail::parse_json(text, "train")); });
}

std::string metric_record_to_json(const MetricRecord& m) { return detail::to_json_value(m).dump(); }

std::string run_record_to_jsonl(const RunRecord& record, std::size_t last_k) {
    std::string out;
    for (const auto& e : record.epochs) {
        Json line{{"type", "epoch"},
                  {"epoch", e.epoch},
                  {"lr", e.lr},
                  {"loss_total", e.loss_total},
                  {"loss_risk", e.loss_risk},
                  {"loss_sep", e.loss_sep},
                  {"loss_penalty", e.loss_penalty},
                  {"test", detail::to_json_value(e.test)}};
        out += line.dump();
        out += '\n';
    }
    Json summary{{"type", "summary"},
                 {"method", std::string(method_name(record.method))},
                 {"seed", record.seed},
                 {"held_out", record.held_out},
                 {"epochs", record.epochs.size()},
                 {"completed", record.completed()},
                 {"failure", record.failure ? Json(*record.failure) : Json(nullptr)},
                 {"last_k", record.epochs.empty()
                                ? Json(nullptr)
                                : detail::to_json_value(summarize_last_k(record, last_k))}};
    out += summary.dump();
    out += '\n';
    return out;
}

ParsedRun run_record_from_jsonl(std::string_view text) {
    ParsedRun parsed;
    bool saw_summary = false;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        const std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.empty()) continue;
        const std::string where = "run record line " + std::to_string(line_no);
        if (saw_summary) throw std::invalid_argument(where + ": content after the summary line");
        guarded(where, [&] {
            const Json j = detail::parse_json(line, where);
            const auto type = j.at("type").get<std::string>();
            if (type == "epoch") {
                detail::require_keys(j,
                                     {"type", "epoch", "lr", "loss_total", "loss_risk", "loss_sep",
                                      "loss_penalty", "test"},
                                     where);
                EpochRecord e;
                detail::read(j, "epoch", e.epoch);
                detail::read(j, "lr", e.lr);
                detail::read(j, "loss_total", e.loss_total);
                detail::read(j, "loss_risk", e.loss_risk);
                detail::read(j, "loss_sep", e.loss_sep);
                detail::read(j, "loss_penalty", e.loss_penalty);
                const Json& t = j.at("test");
                detail::require_keys(t, {"auc", "hter", "tpr_at_fpr05", "s_sep", "s_align", "s_cos"},
                                     where);
                detail::read(t, "auc", e.test.auc);
                detail::read(t, "hter", e.test.hter);
                detail::read(t, "tpr_at_fpr05", e.test.tpr_at_fpr05);
                detail::read(t, "s_sep", e.test.s_sep);
                detail::read(t, "s_align", e.test.s_align);
                detail::read(t, "s_cos", e.test.s_cos);
                parsed.record.epochs.push_back(e);
            } else if (type == "summary") {
                detail::require_keys(j,
                                     {"type", "method", "seed", "held_out", "epochs", "completed",
                                      "failure", "last_k"},
                                     where);
                parsed.record.method = parse_method(j.at("method").get<std::string>());
                detail::read(j, "seed", parsed.record.seed);
                detail::read(j, "held_out", parsed.record.held_out);
                std::size_t count = 0;
                detail::read(j, "epochs", count);
                if (count != parsed.record.epochs.size()) {
                    throw std::invalid_argument(where + ": epoch count disagrees with epoch lines");
                }
                detail::read(j, "failure", parsed.record.failure);
                if (const auto& s = j.at("last_k"); !s.is_null()) {
                    parsed.summary = detail::summary_from(s);
                }
                saw_summary = true;
            } else {
                throw std::invalid_argument(where + ": unknown line type '" + type + "'");
            }
            return 0;
        });
    }
    if (!saw_summary) throw std::invalid_argument("run record: missing summary line");
    return parsed;
}

namespace {

void append_numbers(std::string& out, std::span<const double> values) {
    char buf[32];
    for (double v : values) {
        std::snprintf(buf, sizeof buf, " %.17g", v);
        out += buf;
    }
}

/// Whitespace-separated tokens of one line.
std::vector<std::string_view> tokens(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\r')) ++i;
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\r') ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

template <typename T>
T parse_number(std::string_view tok, const std::string& where) {
    T value{};
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw std::invalid_argument(where + ": bad number '" + std::string(tok) + "'");
    }
    return value;
}

}  // namespace

std::string checkpoint_to_text(const Checkpoint& ckpt) {
    const auto& enc = ckpt.encoder;
    const auto& hp = ckpt.hyperplanes;
    Json header{{"format", "invalign-checkpoint"},
                {"version", 1},
                {"dims", enc.dims()},
                {"seed", ckpt.seed},
                {"epoch", ckpt.epoch},
                {"hyperplanes", {{"count", hp.size()},
                                 {"dim", hp.dim()},
                                 {"alpha", hp.alpha},
                                 {"warmup_epochs", hp.warmup_epochs},
                                 {"epoch", hp.epoch}}}};
    std::string out = header.dump() + "\n";
    for (std::size_t k = 0; k < enc.num_layers(); ++k) {
        out += "weight " + std::to_string(k);
        append_numbers(out, enc.weights()[k].values());
        out += "\nbias " + std::to_string(k);
        append_numbers(out, enc.biases()[k].values());
        out += '\n';
    }
    for (std::size_t e = 0; e < hp.size(); ++e) {
        out += "beta " + std::to_string(e);
        append_numbers(out, hp.betas[e]);
        out += '\n';
    }
    return out;
}

Checkpoint checkpoint_from_text(std::string_view text) {
    std::vector<std::string_view> lines;
    for (std::size_t pos = 0; pos < text.size();) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        if (end > pos) lines.push_back(text.substr(pos, end - pos));
        pos = end + 1;
    }
    if (lines.empty()) throw std::invalid_argument("checkpoint: empty file");
    Checkpoint ckpt;
    std::size_t count = 0, dim = 0;
    guarded("checkpoint header", [&] {
        const Json h = detail::parse_json(lines[0], "checkpoint header");
        if (h.at("format") != "invalign-checkpoint" || h.at("version") != 1) {
            throw std::invalid_argument("checkpoint: unsupported format");
        }
        std::vector<std::size_t> dims;
        detail::read(h, "dims", dims);
        ckpt.encoder = MlpEncoder(dims);
        detail::read(h, "seed", ckpt.seed);
        detail::read(h, "epoch", ckpt.epoch);
        const Json& hp = h.at("hyperplanes");
        detail::read(hp, "count", count);
        detail::read(hp, "dim", dim);
        detail::read(hp, "alpha", ckpt.hyperplanes.alpha);
        detail::read(hp, "warmup_epochs", ckpt.hyperplanes.warmup_epochs);
        detail::read(hp, "epoch", ckpt.hyperplanes.epoch);
        return 0;
    });
    const std::size_t layers = ckpt.encoder.num_layers();
    if (lines.size() != 1 + 2 * layers + count) {
        throw std::invalid_argument("checkpoint: expected " + std::to_string(1 + 2 * layers + count) +
                                    " lines, found " + std::to_string(lines.size()));
    }
    auto fill = [&](std::size_t line_index, std::string_view kind, std::size_t index,
                    std::span<double> dst) {
        const std::string where = "checkpoint line " + std::to_string(line_index + 1);
        const auto toks = tokens(lines[line_index]);
        if (toks.size() != 2 + dst.size() || toks[0] != kind ||
            parse_number<std::size_t>(toks[1], where) != index) {
            throw std::invalid_argument(where + ": expected " + std::string(kind) + " " +
                                        std::to_string(index) + " with " +
                                        std::to_string(dst.size()) + " values");
        }
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = parse_number<double>(toks[2 + i], where);
    };
    std::size_t line = 1;
    for (std::size_t k = 0; k < layers; ++k) {
        fill(line++, "weight", k, ckpt.encoder.weights()[k].data());
        fill(line++, "bias", k, ckpt.encoder.biases()[k].data());
    }
    ckpt.hyperplanes.betas.assign(count, Vector(dim));
    for (std::size_t e = 0; e < count; ++e) fill(line++, "beta", e, ckpt.hyperplanes.betas[e]);
    ckpt.hyperplanes.validate();
    return ckpt;
}

void write_text_file(const std::filesystem::path& path, std::string_view contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace invalign
