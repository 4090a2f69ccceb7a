#include "invalign/worldgen.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace invalign {

namespace {

[[noreturn]] void fail(const std::string& what) {
    throw std::invalid_argument("world spec: " + what);
}

}  // namespace

void WorldSpec::validate() const {
    if (input_dim == 0) fail("input_dim must be positive");
    if (num_domains < 2) fail("num_domains must be at least 2");
    if (n_per_domain_per_class == 0) fail("n_per_domain_per_class must be positive");
    if (transition_dir.size() != input_dim) {
        fail("transition_dir has length " + std::to_string(transition_dir.size()) +
             ", expected " + std::to_string(input_dim));
    }
    if (std::abs(norm(transition_dir) - 1.0) > 1e-9) fail("transition_dir must have unit norm");
    if (domain_offsets.size() != num_domains) {
        fail("expected " + std::to_string(num_domains) + " domain offsets, got " +
             std::to_string(domain_offsets.size()));
    }
    for (std::size_t e = 0; e < domain_offsets.size(); ++e) {
        if (domain_offsets[e].size() != input_dim) {
            fail("domain offset " + std::to_string(e) + " has wrong length");
        }
        for (double v : domain_offsets[e]) {
            if (!std::isfinite(v)) fail("domain offset " + std::to_string(e) + " is not finite");
        }
    }
    if (!(class_gap > 0.0) || !std::isfinite(class_gap)) fail("class_gap must be positive");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
        fail("noise_sigma must be non-negative");
    }
    if (spurious_dim && *spurious_dim >= input_dim) fail("spurious_dim out of range");
    if (spurious_flip_domain && *spurious_flip_domain >= num_domains) {
        fail("spurious_flip_domain out of range");
    }
    if (!std::isfinite(spurious_strength)) fail("spurious_strength must be finite");
}

DomainDataset::DomainDataset(Matrix features, std::vector<int> labels,
                             std::vector<std::size_t> domains, std::size_t num_domains)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      domains_(std::move(domains)),
      num_domains_(num_domains) {
    if (labels_.size() != features_.rows() || domains_.size() != features_.rows()) {
        throw std::invalid_argument("dataset: features, labels and domains differ in length");
    }
    std::vector<int> seen(num_domains_ * 2, 0);
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] != kLive && labels_[i] != kSpoof) {
            throw std::invalid_argument("dataset: label of sample " + std::to_string(i) +
                                        " is not 0 or 1");
        }
        if (domains_[i] >= num_domains_) {
            throw std::invalid_argument("dataset: domain of sample " + std::to_string(i) +
                                        " exceeds domain count");
        }
        seen[domains_[i] * 2 + static_cast<std::size_t>(labels_[i])] = 1;
    }
    for (std::size_t e = 0; e < num_domains_; ++e) {
        if (!seen[2 * e] || !seen[2 * e + 1]) {
            throw std::invalid_argument("dataset: domain " + std::to_string(e) +
                                        " must contain both live and spoof samples");
        }
    }
    require_finite(features_, "dataset features");
}

std::vector<std::size_t> DomainDataset::indices_of(std::size_t domain, int label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (domains_[i] == domain && labels_[i] == label) out.push_back(i);
    }
    return out;
}

std::size_t DomainDataset::domain_size(std::size_t domain) const {
    std::size_t n = 0;
    for (auto e : domains_) n += (e == domain);
    return n;
}

DomainDataset DomainDataset::with_flipped_labels() const {
    std::vector<int> flipped(labels_.size());
    for (std::size_t i = 0; i < labels_.size(); ++i) flipped[i] = 1 - labels_[i];
    return DomainDataset(features_, std::move(flipped), domains_, num_domains_);
}

DomainDataset generate_world(const WorldSpec& spec) {
    spec.validate();
    Rng rng = Rng(spec.seed).derive(Stream::Data);
    const std::size_t d = spec.input_dim;
    const std::size_t n = spec.num_domains * 2 * spec.n_per_domain_per_class;
    Matrix x(n, d);
    std::vector<int> y(n);
    std::vector<std::size_t> e(n);

    std::size_t row = 0;
    for (std::size_t dom = 0; dom < spec.num_domains; ++dom) {
        const double spurious_sign =
            (spec.spurious_flip_domain && *spec.spurious_flip_domain == dom) ? -1.0 : 1.0;
        for (int label : {kLive, kSpoof}) {
            for (std::size_t k = 0; k < spec.n_per_domain_per_class; ++k, ++row) {
                auto xr = x.row(row);
                for (std::size_t j = 0; j < d; ++j) {
                    const double mean = spec.domain_offsets[dom][j] +
                                        label * spec.class_gap * spec.transition_dir[j];
                    xr[j] = mean + spec.noise_sigma * rng.normal();
                }
                if (spec.spurious_dim) {
                    xr[*spec.spurious_dim] =
                        spec.spurious_strength * spurious_sign * (2.0 * label - 1.0) +
                        spec.noise_sigma * rng.normal();
                }
                y[row] = label;
                e[row] = dom;
            }
        }
    }
    return DomainDataset(std::move(x), std::move(y), std::move(e), spec.num_domains);
}

double bayes_auc_invariant(const WorldSpec& spec) {
    if (spec.noise_sigma == 0.0) return spec.class_gap > 0.0 ? 1.0 : 0.5;
    const double arg = spec.class_gap / (spec.noise_sigma * std::numbers::sqrt2);
    return 0.5 * std::erfc(-arg / std::numbers::sqrt2);
}

LeaveOneOutSplit leave_one_out(const DomainDataset& data, std::size_t held_out) {
    const std::size_t num = data.num_domains();
    if (num < 2) throw std::invalid_argument("leave_one_out: need at least two domains");
    if (held_out >= num) {
        throw std::invalid_argument("leave_one_out: held-out domain " + std::to_string(held_out) +
                                    " out of range (" + std::to_string(num) + " domains)");
    }
    std::vector<std::size_t> remap(num);
    LeaveOneOutSplit split;
    split.held_out = held_out;
    for (std::size_t e = 0, k = 0; e < num; ++e) {
        if (e == held_out) continue;
        remap[e] = k++;
        split.train_domain_origin.push_back(e);
    }

    const std::size_t test_n = data.domain_size(held_out);
    const std::size_t train_n = data.size() - test_n;
    const std::size_t d = data.dim();
    Matrix train_x(train_n, d), test_x(test_n, d);
    std::vector<int> train_y, test_y;
    std::vector<std::size_t> train_e, test_e;
    train_y.reserve(train_n);
    test_y.reserve(test_n);

    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto src = data.features().row(i);
        if (data.domains()[i] == held_out) {
            std::copy(src.begin(), src.end(), test_x.row(test_y.size()).begin());
            test_y.push_back(data.labels()[i]);
            test_e.push_back(0);
        } else {
            std::copy(src.begin(), src.end(), train_x.row(train_y.size()).begin());
            train_y.push_back(data.labels()[i]);
            train_e.push_back(remap[data.domains()[i]]);
        }
    }
    split.train = DomainDataset(std::move(train_x), std::move(train_y), std::move(train_e), num - 1);
    split.test = DomainDataset(std::move(test_x), std::move(test_y), std::move(test_e), 1);
    return split;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

void write_csv(const DomainDataset& data, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "domain,label";
    for (std::size_t j = 0; j < data.dim(); ++j) out << ",x" << j;
    out << '\n';
    char buf[64];
    for (std::size_t i = 0; i < data.size(); ++i) {
        out << data.domains()[i] << ',' << data.labels()[i];
        for (double v : data.features().row(i)) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        fields.push_back(line.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return fields;
}

[[noreturn]] void parse_error(const std::filesystem::path& path, std::size_t line,
                              const std::string& what) {
    throw std::invalid_argument(path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

DomainDataset read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) parse_error(path, 1, "missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_fields(line);
    if (header.size() < 3 || header[0] != "domain" || header[1] != "label") {
        parse_error(path, 1, "header must be domain,label,x0,...");
    }
    const std::size_t d = header.size() - 2;
    for (std::size_t j = 0; j < d; ++j) {
        if (header[j + 2] != "x" + std::to_string(j)) {
            parse_error(path, 1, "expected column x" + std::to_string(j));
        }
    }

    std::vector<double> values;
    std::vector<int> labels;
    std::vector<std::size_t> domains;
    std::size_t line_no = 1;
    std::size_t max_domain = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != d + 2) {
            parse_error(path, line_no,
                        "expected " + std::to_string(d + 2) + " columns, found " +
                            std::to_string(fields.size()));
        }
        std::size_t dom = 0;
        auto r1 = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), dom);
        if (r1.ec != std::errc{} || r1.ptr != fields[0].data() + fields[0].size()) {
            parse_error(path, line_no, "bad domain index '" + std::string(fields[0]) + "'");
        }
        int label = -1;
        auto r2 = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), label);
        if (r2.ec != std::errc{} || r2.ptr != fields[1].data() + fields[1].size() ||
            (label != kLive && label != kSpoof)) {
            parse_error(path, line_no, "label must be 0 or 1");
        }
        for (std::size_t j = 0; j < d; ++j) {
            const auto f = fields[j + 2];
            double v = 0.0;
            auto r = std::from_chars(f.data(), f.data() + f.size(), v);
            if (r.ec != std::errc{} || r.ptr != f.data() + f.size() || !std::isfinite(v)) {
                parse_error(path, line_no, "bad value in column x" + std::to_string(j));
            }
            values.push_back(v);
        }
        domains.push_back(dom);
        labels.push_back(label);
        max_domain = std::max(max_domain, dom);
    }
    if (labels.empty()) parse_error(path, line_no, "no samples");

    std::vector<bool> present(max_domain + 1, false);
    for (auto dom : domains) present[dom] = true;
    for (std::size_t e = 0; e <= max_domain; ++e) {
        if (!present[e]) {
            throw std::invalid_argument(path.string() + ": domain indices are not dense (missing " +
                                        std::to_string(e) + ")");
        }
    }
    const std::size_t n = labels.size();
    return DomainDataset(Matrix(n, d, std::move(values)), std::move(labels), std::move(domains),
                         max_domain + 1);
}

WorldSpec make_standard_world(std::size_t input_dim, std::size_t num_domains,
                              std::size_t n_per_domain_per_class, double class_gap,
                              double noise_sigma, double offset_scale, double spurious_sigmas,
                              std::optional<std::size_t> spurious_flip_domain, std::uint64_t seed) {
    if (input_dim < 2) throw std::invalid_argument("make_standard_world: input_dim must be >= 2");
    WorldSpec spec;
    spec.input_dim = input_dim;
    spec.num_domains = num_domains;
    spec.n_per_domain_per_class = n_per_domain_per_class;
    spec.class_gap = class_gap;
    spec.noise_sigma = noise_sigma;
    spec.seed = seed;
    spec.transition_dir.assign(input_dim, 0.0);
    spec.transition_dir[0] = 1.0;
    if (spurious_sigmas > 0.0) {
        spec.spurious_dim = input_dim - 1;
        spec.spurious_strength = spurious_sigmas * noise_sigma;
        spec.spurious_flip_domain = spurious_flip_domain;
    }
    Rng rng = Rng(seed).derive(Stream::Data, 1);
    for (std::size_t e = 0; e < num_domains; ++e) {
        Vector offset(input_dim, 0.0);
        for (std::size_t j = 1; j < input_dim; ++j) {
            if (spec.spurious_dim && j == *spec.spurious_dim) continue;
            offset[j] = offset_scale * rng.normal();
        }
        spec.domain_offsets.push_back(std::move(offset));
    }
    return spec;
}

}  // namespace invalign
