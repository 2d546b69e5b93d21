#include "mpfedkd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <set>

#include "json.hpp"

#include "mpfedkd/error.hpp"
#include "mpfedkd/rng.hpp"

namespace mpfedkd::data {

using Kind = DataError::Kind;

void Dataset::validate() const {
    if (labels.empty()) throw DataError(Kind::invalid_argument, "dataset '" + name + "' is empty");
    if (features.rank() != 2 || features.rows() != labels.size())
        throw DataError(Kind::count_mismatch, "dataset '" + name + "': feature rows do not match label count");
    if (domains.size() != labels.size())
        throw DataError(Kind::count_mismatch, "dataset '" + name + "': domain tags do not match label count");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw DataError(Kind::invalid_argument, "dataset '" + name + "': label " + std::to_string(y) +
                                                        " outside [0, " + std::to_string(num_classes) + ")");
}

ad::Tensor Dataset::rows(std::span<const std::size_t> indices) const {
    const auto d = input_dim();
    std::vector<double> out;
    out.reserve(indices.size() * d);
    for (auto i : indices) {
        auto r = features.row(i);
        out.insert(out.end(), r.begin(), r.end());
    }
    return ad::Tensor({indices.size(), d}, std::move(out));
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels[i]);
    return out;
}

std::vector<std::size_t> Dataset::distinct_domains() const {
    std::set<int> s(domains.begin(), domains.end());
    return {s.begin(), s.end()};
}

// ---------------------------------------------------------------- IDX

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(Kind::io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

}  // namespace

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw DataError(Kind::truncated, "IDX image file shorter than its magic number");
    if (auto m = be32(bytes, 0); m != kImagesMagic)
        throw DataError(Kind::bad_magic, "IDX image magic is " + std::to_string(m) + ", expected 2051");
    if (bytes.size() < 16) throw DataError(Kind::truncated, "IDX image header truncated");
    IdxImages img;
    img.count = be32(bytes, 4);
    img.rows = be32(bytes, 8);
    img.cols = be32(bytes, 12);
    const auto need = img.count * img.rows * img.cols;
    if (bytes.size() - 16 < need) throw DataError(Kind::truncated, "IDX image payload truncated");
    img.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(need));
    return img;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4) throw DataError(Kind::truncated, "IDX label file shorter than its magic number");
    if (auto m = be32(bytes, 0); m != kLabelsMagic)
        throw DataError(Kind::bad_magic, "IDX label magic is " + std::to_string(m) + ", expected 2049");
    if (bytes.size() < 8) throw DataError(Kind::truncated, "IDX label header truncated");
    const std::size_t n = be32(bytes, 4);
    if (bytes.size() - 8 < n) throw DataError(Kind::truncated, "IDX label payload truncated");
    return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n)};
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t limit,
                 int domain) {
    auto img = parse_idx_images(slurp(images));
    auto lab = parse_idx_labels(slurp(labels));
    if (img.count != lab.size())
        throw DataError(Kind::count_mismatch, std::to_string(img.count) + " images but " + std::to_string(lab.size()) +
                                                  " labels");
    if (img.count == 0) throw DataError(Kind::invalid_argument, "IDX files hold no samples");
    const std::size_t n = limit ? std::min(limit, img.count) : img.count;
    const std::size_t d = img.rows * img.cols;

    Dataset ds;
    ds.name = images.stem().string();
    std::vector<double> feats(n * d);
    for (std::size_t i = 0; i < n * d; ++i) feats[i] = img.pixels[i] / 255.0;
    ds.features = ad::Tensor({n, d}, std::move(feats));
    ds.labels.assign(lab.begin(), lab.begin() + static_cast<std::ptrdiff_t>(n));
    ds.domains.assign(n, domain);
    ds.num_classes = static_cast<std::size_t>(*std::max_element(lab.begin(), lab.end())) + 1;
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------- blobs

std::vector<std::vector<double>> blob_centers(std::size_t classes, std::size_t dim, std::uint64_t seed, double radius) {
    constexpr int kCandidates = 64;
    auto rng = make_rng(seed, {stream::data, 0});
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::vector<double>> best;
    double best_sep = -1.0;
    for (int cand = 0; cand < kCandidates; ++cand) {
        std::vector<std::vector<double>> centers(classes, std::vector<double>(dim));
        for (auto& c : centers) {
            double norm = 0.0;
            while (norm < 1e-12) {
                norm = 0.0;
                for (auto& x : c) {
                    x = normal(rng);
                    norm += x * x;
                }
            }
            norm = std::sqrt(norm);
            for (auto& x : c) x = radius * x / norm;
        }
        double sep = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < classes; ++a)
            for (std::size_t b = a + 1; b < classes; ++b) {
                double s = 0.0;
                for (std::size_t q = 0; q < dim; ++q) s += (centers[a][q] - centers[b][q]) * (centers[a][q] - centers[b][q]);
                sep = std::min(sep, s);
            }
        if (sep > best_sep) {
            best_sep = sep;
            best = std::move(centers);
        }
    }
    return best;
}

Dataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double spread, std::uint64_t seed,
                    double radius, int domain) {
    if (classes < 2) throw DataError(Kind::invalid_argument, "blobs need at least two classes");
    if (per_class < 1) throw DataError(Kind::invalid_argument, "blobs need at least one sample per class");
    if (dim < 1) throw DataError(Kind::invalid_argument, "blob dimension must be positive");
    if (!(spread >= 0.0) || !(radius > 0.0)) throw DataError(Kind::invalid_argument, "blob spread/radius out of range");

    auto centers = blob_centers(classes, dim, seed, radius);
    auto rng = make_rng(seed, {stream::data, 1});
    std::normal_distribution<double> normal(0.0, 1.0);

    Dataset ds;
    ds.name = "blobs";
    ds.num_classes = classes;
    std::vector<double> feats;
    feats.reserve(classes * per_class * dim);
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            for (std::size_t q = 0; q < dim; ++q) feats.push_back(centers[c][q] + spread * normal(rng));
            ds.labels.push_back(static_cast<int>(c));
        }
    ds.features = ad::Tensor({classes * per_class, dim}, std::move(feats));
    ds.domains.assign(ds.labels.size(), domain);
    return ds;
}

Dataset concat_domains(const Dataset& a, const Dataset& b, std::string name) {
    if (a.input_dim() != b.input_dim())
        throw DataError(Kind::invalid_argument, "cannot combine datasets of different input widths");
    Dataset ds;
    ds.name = name.empty() ? a.name + "+" + b.name : std::move(name);
    ds.num_classes = std::max(a.num_classes, b.num_classes);
    std::vector<double> feats(a.features.data().begin(), a.features.data().end());
    feats.insert(feats.end(), b.features.data().begin(), b.features.data().end());
    ds.features = ad::Tensor({a.size() + b.size(), a.input_dim()}, std::move(feats));
    ds.labels = a.labels;
    ds.labels.insert(ds.labels.end(), b.labels.begin(), b.labels.end());
    ds.domains = a.domains;
    ds.domains.insert(ds.domains.end(), b.domains.begin(), b.domains.end());
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------- partitioning

Heterogeneity parse_heterogeneity(const std::string& name) {
    if (name == "same-domain" || name == "type1") return Heterogeneity::same_domain;
    if (name == "distinct-domain" || name == "type2") return Heterogeneity::distinct_domain;
    throw ConfigError("unknown partition type '" + name + "' (expected same-domain or distinct-domain)");
}

std::string to_string(Heterogeneity h) {
    return h == Heterogeneity::same_domain ? "same-domain" : "distinct-domain";
}

std::vector<int> ClientShard::present_classes() const {
    std::vector<int> out;
    for (std::size_t c = 0; c < class_histogram.size(); ++c)
        if (class_histogram[c] > 0) out.push_back(static_cast<int>(c));
    return out;
}

std::vector<std::size_t> PartitionPlan::union_test() const {
    std::vector<std::size_t> out;
    for (const auto& s : shards) out.insert(out.end(), s.test.begin(), s.test.end());
    std::sort(out.begin(), out.end());
    return out;
}

std::string PartitionPlan::to_json() const {
    nlohmann::ordered_json j;
    j["alpha"] = alpha;
    j["type"] = to_string(heterogeneity);
    j["seed"] = seed;
    j["attempts"] = attempts;
    j["clients"] = shards.size();
    auto& arr = j["shards"] = nlohmann::ordered_json::array();
    for (const auto& s : shards) {
        nlohmann::ordered_json e;
        e["client"] = s.client;
        if (s.domain) e["domain"] = *s.domain;
        e["train_size"] = s.train.size();
        e["test_size"] = s.test.size();
        e["class_histogram"] = s.class_histogram;
        e["train"] = s.train;
        e["test"] = s.test;
        arr.push_back(std::move(e));
    }
    return j.dump(2);
}

namespace {

// Dirichlet(alpha * 1_k) via normalized gamma draws.
std::vector<double> dirichlet(Rng& rng, double alpha, std::size_t k) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<double> p(k);
    double total = 0.0;
    while (!(total > 0.0)) {
        total = 0.0;
        for (auto& x : p) {
            x = gamma(rng);
            total += x;
        }
    }
    for (auto& x : p) x /= total;
    return p;
}

// Splits `samples` (already shuffled) over `group` by cumulative-proportion
// cut points: client j receives floor(n*cdf_j) - floor(n*cdf_{j-1}) samples.
void split_class(std::span<const std::size_t> samples, std::span<const std::size_t> group, const std::vector<double>& p,
                 std::vector<std::vector<std::size_t>>& assigned) {
    const auto n = samples.size();
    double cdf = 0.0;
    std::size_t start = 0;
    for (std::size_t j = 0; j < group.size(); ++j) {
        cdf += p[j];
        std::size_t end = j + 1 == group.size() ? n : std::min(n, static_cast<std::size_t>(std::floor(cdf * n)));
        end = std::max(end, start);
        assigned[group[j]].insert(assigned[group[j]].end(), samples.begin() + start, samples.begin() + end);
        start = end;
    }
}

}  // namespace

PartitionPlan partition_dirichlet(const Dataset& ds, const PartitionOptions& opt) {
    ds.validate();
    if (opt.clients < 1) throw DataError(Kind::invalid_argument, "partition needs at least one client");
    if (!(opt.alpha > 0.0)) throw DataError(Kind::invalid_argument, "Dirichlet alpha must be positive");
    if (!(opt.test_fraction >= 0.0 && opt.test_fraction < 1.0))
        throw DataError(Kind::invalid_argument, "test fraction must lie in [0, 1)");

    const auto M = opt.clients;
    const auto C = ds.num_classes;
    auto rng = make_rng(opt.seed, {stream::partition});

    // Client groups and the samples each group draws from.
    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::vector<std::size_t>> group_samples;
    std::vector<std::optional<int>> group_domain;
    if (opt.heterogeneity == Heterogeneity::same_domain) {
        groups.emplace_back(M);
        std::iota(groups[0].begin(), groups[0].end(), 0);
        group_samples.emplace_back(ds.size());
        std::iota(group_samples[0].begin(), group_samples[0].end(), 0);
        group_domain.emplace_back();
    } else {
        auto doms = ds.distinct_domains();
        if (doms.size() != 2)
            throw DataError(Kind::invalid_argument, "distinct-domain partitioning needs exactly two domain tags, found " +
                                                        std::to_string(doms.size()));
        if (M < 2) throw DataError(Kind::invalid_argument, "distinct-domain partitioning needs at least two clients");
        std::vector<std::size_t> order(M);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        const auto half = M - M / 2;
        groups.emplace_back(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
        groups.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());
        for (auto& g : groups) std::sort(g.begin(), g.end());
        for (std::size_t d = 0; d < 2; ++d) {
            std::vector<std::size_t> s;
            for (std::size_t i = 0; i < ds.size(); ++i)
                if (ds.domains[i] == static_cast<int>(doms[d])) s.push_back(i);
            group_samples.push_back(std::move(s));
            group_domain.emplace_back(static_cast<int>(doms[d]));
        }
    }

    for (std::size_t attempt = 1; attempt <= opt.max_retries + 1; ++attempt) {
        std::vector<std::vector<std::size_t>> assigned(M);
        for (std::size_t g = 0; g < groups.size(); ++g) {
            std::vector<std::vector<std::size_t>> by_class(C);
            for (auto i : group_samples[g]) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
            for (auto& samples : by_class) {
                if (samples.empty()) continue;
                std::shuffle(samples.begin(), samples.end(), rng);
                auto p = dirichlet(rng, opt.alpha, groups[g].size());
                split_class(samples, groups[g], p, assigned);
            }
        }
        if (std::any_of(assigned.begin(), assigned.end(), [](const auto& a) { return a.empty(); })) continue;

        PartitionPlan plan;
        plan.alpha = opt.alpha;
        plan.heterogeneity = opt.heterogeneity;
        plan.seed = opt.seed;
        plan.attempts = attempt;
        plan.shards.resize(M);
        for (std::size_t g = 0; g < groups.size(); ++g)
            for (auto m : groups[g]) plan.shards[m].domain = group_domain[g];
        for (std::size_t m = 0; m < M; ++m) {
            auto& shard = plan.shards[m];
            shard.client = m;
            shard.class_histogram.assign(C, 0);
            // Stratified hold-out: a fixed fraction of each class, rounded.
            std::vector<std::vector<std::size_t>> by_class(C);
            for (auto i : assigned[m]) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
            for (std::size_t c = 0; c < C; ++c) {
                auto& s = by_class[c];
                const auto n_test = static_cast<std::size_t>(std::lround(opt.test_fraction * static_cast<double>(s.size())));
                shard.test.insert(shard.test.end(), s.begin(), s.begin() + static_cast<std::ptrdiff_t>(n_test));
                shard.train.insert(shard.train.end(), s.begin() + static_cast<std::ptrdiff_t>(n_test), s.end());
                shard.class_histogram[c] = s.size() - n_test;
            }
            std::sort(shard.train.begin(), shard.train.end());
            std::sort(shard.test.begin(), shard.test.end());
        }
        return plan;
    }
    throw DataError(Kind::partition_failed, "a client received no samples after " + std::to_string(opt.max_retries) +
                                                " Dirichlet resamples; lower the client count or raise alpha");
}

}  // namespace mpfedkd::data
