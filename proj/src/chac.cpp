#include "mpfedkd/chac.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "mpfedkd/error.hpp"
#include "mpfedkd/rng.hpp"

namespace mpfedkd::clustering {

double delta_ssq(std::size_t size_a, std::span<const double> mean_a, std::size_t size_b,
                 std::span<const double> mean_b) {
    if (mean_a.size() != mean_b.size())
        throw ShapeError("delta_ssq: clusters have different dimensionality (" + std::to_string(mean_a.size()) +
                         " vs " + std::to_string(mean_b.size()) + ")");
    if (size_a == 0 || size_b == 0) throw Error("delta_ssq: empty cluster");
    double d2 = 0.0;
    for (std::size_t q = 0; q < mean_a.size(); ++q) {
        const double diff = mean_a[q] - mean_b[q];
        d2 += diff * diff;
    }
    const double va = static_cast<double>(size_a), vb = static_cast<double>(size_b);
    return va * vb / (va + vb) * d2;
}

double delta_ssq(const Cluster& a, const Cluster& b) { return delta_ssq(a.size(), a.mean, b.size(), b.mean); }

Cluster make_cluster(const ad::Tensor& points, std::vector<std::size_t> members) {
    if (members.empty()) throw Error("cluster must have at least one member");
    std::sort(members.begin(), members.end());
    Cluster c;
    c.mean.assign(points.cols(), 0.0);
    for (auto i : members) {
        auto r = points.row(i);
        for (std::size_t q = 0; q < r.size(); ++q) c.mean[q] += r[q];
    }
    for (auto& m : c.mean) m /= static_cast<double>(members.size());
    c.members = std::move(members);
    return c;
}

namespace {

void require_points(const ad::Tensor& points) {
    if (points.rank() != 2 || points.size() == 0) throw ShapeError("clustering expects a non-empty [n x Q] matrix");
}

ClusteringResult singletons(const ad::Tensor& points) {
    ClusteringResult r;
    for (std::size_t i = 0; i < points.rows(); ++i) r.clusters.push_back(make_cluster(points, {i}));
    return r;
}

}  // namespace

ClusteringResult chac(const ad::Tensor& points, std::size_t target) {
    if (target < 1) throw Error("chac: target cluster count must be at least 1");
    require_points(points);
    const std::size_t n = points.rows();
    if (n <= target) return singletons(points);

    // Slot s holds the cluster whose smallest member is s; merging (i, j) with
    // i < j keeps slot i. nn[i] caches the best partner j > i of row i.
    std::vector<Cluster> slot(n);
    for (std::size_t i = 0; i < n; ++i) slot[i] = make_cluster(points, {i});
    std::vector<bool> active(n, true);
    constexpr double kInf = std::numeric_limits<double>::infinity();
    constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
    std::vector<double> nd(n, kInf);
    std::vector<std::size_t> nn(n, kNone);

    auto rescan = [&](std::size_t i) {
        nd[i] = kInf;
        nn[i] = kNone;
        for (std::size_t k = i + 1; k < n; ++k) {
            if (!active[k]) continue;
            const double d = delta_ssq(slot[i], slot[k]);
            if (d < nd[i]) {
                nd[i] = d;
                nn[i] = k;
            }
        }
    };
    for (std::size_t i = 0; i < n; ++i) rescan(i);

    ClusteringResult result;
    result.merges.reserve(n - target);
    for (std::size_t remaining = n; remaining > target; --remaining) {
        std::size_t i = kNone;
        for (std::size_t k = 0; k < n; ++k)
            if (active[k] && nn[k] != kNone && (i == kNone || nd[k] < nd[i])) i = k;
        const std::size_t j = nn[i];
        result.merges.push_back({i, j, nd[i]});

        Cluster& a = slot[i];
        Cluster& b = slot[j];
        const double va = static_cast<double>(a.size()), vb = static_cast<double>(b.size());
        for (std::size_t q = 0; q < a.mean.size(); ++q) a.mean[q] = (va * a.mean[q] + vb * b.mean[q]) / (va + vb);
        std::vector<std::size_t> merged;
        merged.reserve(a.size() + b.size());
        std::merge(a.members.begin(), a.members.end(), b.members.begin(), b.members.end(), std::back_inserter(merged));
        a.members = std::move(merged);
        b = {};
        active[j] = false;
        nd[j] = kInf;
        nn[j] = kNone;

        rescan(i);
        for (std::size_t k = 0; k < j; ++k) {
            if (!active[k] || k == i) continue;
            if (nn[k] == i || nn[k] == j) {
                rescan(k);
            } else if (k < i) {
                const double d = delta_ssq(slot[k], slot[i]);
                if (d < nd[k] || (d == nd[k] && i < nn[k])) {
                    nd[k] = d;
                    nn[k] = i;
                }
            }
        }
    }

    for (std::size_t s = 0; s < n; ++s)
        if (active[s]) result.clusters.push_back(std::move(slot[s]));
    return result;
}

std::vector<std::vector<double>> centroids(const ClusteringResult& result) {
    std::vector<std::vector<double>> out;
    out.reserve(result.clusters.size());
    for (const auto& c : result.clusters) out.push_back(c.mean);
    return out;
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t q = 0; q < a.size(); ++q) s += (a[q] - b[q]) * (a[q] - b[q]);
    return s;
}

struct LloydRun {
    std::vector<std::size_t> assignment;
    double inertia = 0.0;
};

LloydRun lloyd(const ad::Tensor& points, std::size_t k, Rng& rng, std::size_t max_iters) {
    const std::size_t n = points.rows(), Q = points.cols();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    // Partial Fisher-Yates: the first k entries are a uniform draw without replacement.
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(order[i], order[pick(rng)]);
    }
    std::vector<std::vector<double>> centers(k);
    for (std::size_t c = 0; c < k; ++c) {
        auto r = points.row(order[c]);
        centers[c].assign(r.begin(), r.end());
    }

    std::vector<std::size_t> assign(n, k);
    for (std::size_t iter = 0; iter < std::max<std::size_t>(max_iters, 1); ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double bd = sq_dist(points.row(i), centers[0]);
            for (std::size_t c = 1; c < k; ++c) {
                const double d = sq_dist(points.row(i), centers[c]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        // An emptied cluster takes the point farthest from its own center
        // among clusters that can spare one.
        std::vector<std::size_t> counts(k, 0);
        for (auto a : assign) ++counts[a];
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) continue;
            std::size_t far = n;
            double fd = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[assign[i]] < 2) continue;
                const double d = sq_dist(points.row(i), centers[assign[i]]);
                if (d > fd) {
                    fd = d;
                    far = i;
                }
            }
            --counts[assign[far]];
            assign[far] = c;
            counts[c] = 1;
            changed = true;
        }
        for (auto& ctr : centers) std::fill(ctr.begin(), ctr.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto r = points.row(i);
            for (std::size_t q = 0; q < Q; ++q) centers[assign[i]][q] += r[q];
        }
        for (std::size_t c = 0; c < k; ++c)
            for (auto& v : centers[c]) v /= static_cast<double>(counts[c]);
        if (!changed) break;
    }

    LloydRun run;
    run.assignment = std::move(assign);
    for (std::size_t i = 0; i < n; ++i) run.inertia += sq_dist(points.row(i), centers[run.assignment[i]]);
    return run;
}

}  // namespace

ClusteringResult kmeans(const ad::Tensor& points, std::size_t k, std::uint64_t seed, const KMeansOptions& options) {
    if (k < 1) throw Error("kmeans: k must be at least 1");
    require_points(points);
    const std::size_t n = points.rows();
    if (n <= k) return singletons(points);

    LloydRun best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < std::max<std::size_t>(options.restarts, 1); ++r) {
        auto rng = make_rng(seed, {stream::kmeans, r});
        auto run = lloyd(points, k, rng, options.max_iters);
        if (run.inertia < best.inertia) best = std::move(run);
    }

    std::vector<std::vector<std::size_t>> groups(k);
    for (std::size_t i = 0; i < n; ++i) groups[best.assignment[i]].push_back(i);
    std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
    ClusteringResult result;
    for (auto& g : groups) result.clusters.push_back(make_cluster(points, std::move(g)));
    return result;
}

double inertia(const ad::Tensor& points, const ClusteringResult& result) {
    double s = 0.0;
    for (const auto& c : result.clusters)
        for (auto i : c.members) s += sq_dist(points.row(i), c.mean);
    return s;
}

std::string merge_log_csv(const ClusteringResult& result) {
    std::ostringstream os;
    os << "step,a,b,delta_ssq\n";
    char buf[64];
    for (std::size_t s = 0; s < result.merges.size(); ++s) {
        const auto& m = result.merges[s];
        std::snprintf(buf, sizeof buf, "%.17g", m.delta_ssq);
        os << s << ',' << m.a << ',' << m.b << ',' << buf << '\n';
    }
    return os.str();
}

Clusterer parse_clusterer(const std::string& name) {
    if (name == "chac") return Clusterer::chac;
    if (name == "kmeans") return Clusterer::kmeans;
    throw ConfigError("unknown clusterer '" + name + "' (expected chac or kmeans)");
}

std::string to_string(Clusterer c) { return c == Clusterer::chac ? "chac" : "kmeans"; }

}  // namespace mpfedkd::clustering
