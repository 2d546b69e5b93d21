#include "mpfedkd/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "mpfedkd/error.hpp"

namespace mpfedkd::harness {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string where(const std::string& section, const std::string& key) { return "[" + section + "] " + key; }

std::size_t to_size(const std::string& v, const std::string& name) {
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError(name + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

std::uint64_t to_u64(const std::string& v, const std::string& name) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError(name + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

double to_double(const std::string& v, const std::string& name) {
    double out = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(name + ": expected a number, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& v, const std::string& name) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(name + ": expected true or false, got '" + v + "'");
}

struct Field {
    std::string section;
    std::string key;
    std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <class Member>
Field size_field(std::string section, std::string key, Member member) {
    return {std::move(section), std::move(key),
            [member](ExperimentConfig& c, const std::string& v, const std::string& n) { member(c) = to_size(v, n); },
            [member](const ExperimentConfig& c) { return std::to_string(member(c)); }};
}

template <class Member>
Field double_field(std::string section, std::string key, Member member) {
    return {std::move(section), std::move(key),
            [member](ExperimentConfig& c, const std::string& v, const std::string& n) { member(c) = to_double(v, n); },
            [member](const ExperimentConfig& c) { return fmt_double(member(c)); }};
}

template <class Member>
Field bool_field(std::string section, std::string key, Member member) {
    return {std::move(section), std::move(key),
            [member](ExperimentConfig& c, const std::string& v, const std::string& n) { member(c) = to_bool(v, n); },
            [member](const ExperimentConfig& c) {
                return std::string(member(c) ? "true" : "false");
            }};
}

template <class Member>
Field string_field(std::string section, std::string key, Member member) {
    return {std::move(section), std::move(key),
            [member](ExperimentConfig& c, const std::string& v, const std::string&) { member(c) = v; },
            [member](const ExperimentConfig& c) { return member(c); }};
}

#define MEMBER(expr) [](auto& c) -> auto& { return expr; }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"experiment", "method",
                     [](ExperimentConfig& c, const std::string& v, const std::string&) {
                         c.federation.method = fl::parse_method(v);
                     },
                     [](const ExperimentConfig& c) { return fl::to_string(c.federation.method); }});
        f.push_back({"experiment", "seed",
                     [](ExperimentConfig& c, const std::string& v, const std::string& n) {
                         c.federation.seed = to_u64(v, n);
                     },
                     [](const ExperimentConfig& c) { return std::to_string(c.federation.seed); }});
        f.push_back(size_field("experiment", "rounds", MEMBER(c.rounds)));
        f.push_back(string_field("experiment", "out", MEMBER(c.out)));
        f.push_back(bool_field("experiment", "checkpoints", MEMBER(c.checkpoints)));

        f.push_back(string_field("data", "source", MEMBER(c.data.source)));
        f.push_back(size_field("data", "classes", MEMBER(c.data.classes)));
        f.push_back(size_field("data", "per_class", MEMBER(c.data.per_class)));
        f.push_back(size_field("data", "dim", MEMBER(c.data.dim)));
        f.push_back(double_field("data", "spread", MEMBER(c.data.spread)));
        f.push_back(double_field("data", "radius", MEMBER(c.data.radius)));
        f.push_back(size_field("data", "domains", MEMBER(c.data.domains)));
        f.push_back(string_field("data", "images", MEMBER(c.data.images)));
        f.push_back(string_field("data", "labels", MEMBER(c.data.labels)));
        f.push_back(string_field("data", "images_b", MEMBER(c.data.images_b)));
        f.push_back(string_field("data", "labels_b", MEMBER(c.data.labels_b)));
        f.push_back(size_field("data", "limit", MEMBER(c.data.limit)));
        f.push_back(double_field("data", "test_fraction", MEMBER(c.data.test_fraction)));

        f.push_back(size_field("partition", "clients", MEMBER(c.partition.clients)));
        f.push_back(double_field("partition", "alpha", MEMBER(c.partition.alpha)));
        f.push_back({"partition", "heterogeneity",
                     [](ExperimentConfig& c, const std::string& v, const std::string&) {
                         c.partition.heterogeneity = data::parse_heterogeneity(v);
                     },
                     [](const ExperimentConfig& c) { return data::to_string(c.partition.heterogeneity); }});

        f.push_back({"model", "backbone",
                     [](ExperimentConfig& c, const std::string& v, const std::string&) {
                         c.backbone.kind = model::parse_backbone_kind(v);
                     },
                     [](const ExperimentConfig& c) { return model::to_string(c.backbone.kind); }});
        f.push_back(size_field("model", "hidden_dim", MEMBER(c.backbone.hidden_dim)));
        f.push_back(size_field("model", "embedding_dim", MEMBER(c.backbone.embedding_dim)));
        f.push_back(size_field("model", "channels", MEMBER(c.backbone.channels)));
        f.push_back(size_field("model", "height", MEMBER(c.backbone.height)));
        f.push_back(size_field("model", "width", MEMBER(c.backbone.width)));
        f.push_back(size_field("model", "kernel", MEMBER(c.backbone.kernel)));
        f.push_back(size_field("model", "conv1_channels", MEMBER(c.backbone.conv1_channels)));
        f.push_back(size_field("model", "conv2_channels", MEMBER(c.backbone.conv2_channels)));
        f.push_back(size_field("model", "fc_hidden", MEMBER(c.backbone.fc_hidden)));

        f.push_back(size_field("training", "epochs", MEMBER(c.federation.epochs)));
        f.push_back(size_field("training", "batch_size", MEMBER(c.federation.batch_size)));
        f.push_back(double_field("training", "learning_rate", MEMBER(c.federation.learning_rate)));
        f.push_back(double_field("training", "fraction", MEMBER(c.federation.fraction)));
        f.push_back(size_field("training", "workers", MEMBER(c.federation.workers)));
        f.push_back(size_field("training", "distributed_units", MEMBER(c.federation.distributed_units)));
        f.push_back(double_field("training", "prox_rho", MEMBER(c.federation.prox_rho)));
        f.push_back(double_field("training", "proto_weight", MEMBER(c.federation.proto_weight)));

        f.push_back(double_field("loss", "mu1", MEMBER(c.federation.weights.mu1)));
        f.push_back(double_field("loss", "mu2", MEMBER(c.federation.weights.mu2)));
        f.push_back(double_field("loss", "mu3", MEMBER(c.federation.weights.mu3)));
        f.push_back(double_field("loss", "lemgp_balance", MEMBER(c.federation.weights.lemgp_balance)));
        f.push_back(double_field("loss", "lemgp_scale", MEMBER(c.federation.weights.lemgp_scale)));
        f.push_back(double_field("loss", "tau", MEMBER(c.federation.weights.tau)));

        f.push_back(size_field("prototypes", "per_class", MEMBER(c.federation.prototypes_per_class)));
        f.push_back({"prototypes", "aggregation",
                     [](ExperimentConfig& c, const std::string& v, const std::string&) {
                         c.federation.aggregation = fl::parse_aggregation(v);
                     },
                     [](const ExperimentConfig& c) { return fl::to_string(c.federation.aggregation); }});
        f.push_back(bool_field("prototypes", "per_batch", MEMBER(c.federation.per_batch_prototypes)));
        f.push_back(size_field("prototypes", "kmeans_restarts", MEMBER(c.federation.kmeans.restarts)));
        f.push_back(size_field("prototypes", "kmeans_max_iters", MEMBER(c.federation.kmeans.max_iters)));
        return f;
    }();
    return table;
}

#undef MEMBER

}  // namespace

IniFile parse_ini(std::string_view text) {
    IniFile out;
    std::string section;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        const std::string at = "line " + std::to_string(line_no) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(at + "unterminated section header");
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            if (section.empty()) throw ConfigError(at + "empty section name");
            out[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(at + "expected 'key = value'");
        if (section.empty()) throw ConfigError(at + "key outside of any section");
        std::string key = trim(std::string_view(line).substr(0, eq));
        std::string value = trim(std::string_view(line).substr(eq + 1));
        if (key.empty()) throw ConfigError(at + "empty key");
        auto& sec = out[section];
        if (sec.contains(key)) throw ConfigError(at + "duplicate key " + where(section, key));
        sec.emplace(std::move(key), std::move(value));
    }
    return out;
}

ExperimentConfig apply_ini(const IniFile& ini, ExperimentConfig base) {
    const auto& table = fields();
    for (const auto& [section, entries] : ini) {
        bool known_section = false;
        for (const auto& f : table) known_section = known_section || f.section == section;
        if (!known_section) throw ConfigError("unknown config section [" + section + "]");
        for (const auto& [key, value] : entries) {
            const Field* hit = nullptr;
            for (const auto& f : table)
                if (f.section == section && f.key == key) hit = &f;
            if (!hit) throw ConfigError("unknown config key " + where(section, key));
            hit->set(base, value, where(section, key));
        }
    }
    return base;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return apply_ini(parse_ini(ss.str()));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void ExperimentConfig::validate() const {
    if (rounds < 1) throw ConfigError("rounds must be at least 1");
    if (data.source != "blobs" && data.source != "idx")
        throw ConfigError("data source must be blobs or idx, got '" + data.source + "'");
    if (data.source == "blobs") {
        if (data.classes < 1 || data.per_class < 1 || data.dim < 1)
            throw ConfigError("blobs need at least one class, sample and dimension");
        if (!(data.spread > 0.0)) throw ConfigError("blob spread must be positive");
        if (data.domains != 1 && data.domains != 2) throw ConfigError("blobs support 1 or 2 domains");
    } else {
        if (data.images.empty() || data.labels.empty()) throw ConfigError("idx source needs images and labels paths");
        if (data.images_b.empty() != data.labels_b.empty())
            throw ConfigError("second idx domain needs both images_b and labels_b");
    }
    if (!(data.test_fraction >= 0.0 && data.test_fraction < 1.0))
        throw ConfigError("test fraction must lie in [0, 1)");
    if (partition.clients < 1) throw ConfigError("at least one client is required");
    if (!(partition.alpha > 0.0)) throw ConfigError("Dirichlet alpha must be positive");
    if (partition.heterogeneity == data::Heterogeneity::distinct_domain && partition.clients < 2)
        throw ConfigError("distinct-domain partitioning needs at least two clients");
    federation.validate();
}

std::string ExperimentConfig::to_ini() const {
    std::string out;
    std::string section;
    for (const auto& f : fields()) {
        if (f.section != section) {
            if (!section.empty()) out += "\n";
            section = f.section;
            out += "[" + section + "]\n";
        }
        out += f.key + " = " + f.get(*this) + "\n";
    }
    return out;
}

}  // namespace mpfedkd::harness
