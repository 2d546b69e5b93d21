#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace oracle {

namespace {

double mean_sq(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

std::vector<double> softmax(const std::vector<double>& z, double tau) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : z) mx = std::max(mx, v / tau);
    std::vector<double> p(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] / tau - mx);
    for (auto& v : p) v /= s;
    return p;
}

// Per class present in labels and protos: mean over that class's rows of mean_sq.
std::vector<double> class_terms(const Matrix& emb, const std::vector<int>& labels, const Protos& protos) {
    std::map<int, std::pair<double, std::size_t>> acc;
    for (std::size_t i = 0; i < emb.size(); ++i) {
        auto it = protos.find(labels[i]);
        if (it == protos.end()) continue;
        auto& a = acc[labels[i]];
        a.first += mean_sq(emb[i], it->second);
        ++a.second;
    }
    std::vector<double> out;
    for (const auto& [c, a] : acc) out.push_back(a.first / static_cast<double>(a.second));
    return out;
}

}  // namespace

double ce(const Matrix& logits, const std::vector<int>& labels) {
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i)
        s -= std::log(softmax(logits[i], 1.0)[static_cast<std::size_t>(labels[i])]);
    return s / static_cast<double>(logits.size());
}

double skd(const Matrix& teacher, const Matrix& student, double tau) {
    double s = 0.0;
    for (std::size_t i = 0; i < teacher.size(); ++i) {
        auto p = softmax(teacher[i], tau);
        auto q = softmax(student[i], tau);
        for (std::size_t j = 0; j < p.size(); ++j) s += p[j] * std::log(p[j] / q[j]);
    }
    return tau * tau * s / static_cast<double>(teacher.size());
}

double pa(const Matrix& prev_emb, const std::vector<int>& labels, const Protos& protos) {
    auto terms = class_terms(prev_emb, labels, protos);
    if (terms.empty()) return 0.0;
    double s = 0.0;
    for (double t : terms) s += t;
    return s / static_cast<double>(terms.size());
}

double attractive(const Matrix& emb, const std::vector<int>& labels, const Protos& protos, double scale) {
    double s = 0.0;
    for (double t : class_terms(emb, labels, protos)) s += scale * t;
    return s;
}

double repulsive(const Matrix& emb, const Protos& protos, const std::vector<int>& classes, double scale) {
    double s = 0.0;
    for (int c : classes) {
        double d = 0.0;
        for (const auto& row : emb) d += mean_sq(row, protos.at(c));
        s += std::exp(-scale * d / static_cast<double>(emb.size()));
    }
    return std::log(s);
}

double lemgp(const Matrix& emb, const std::vector<int>& labels, const Protos& protos, const std::vector<int>& classes,
             double scale, double balance) {
    return balance * attractive(emb, labels, protos, scale) + (1.0 - balance) * repulsive(emb, protos, classes, scale);
}

double best_two_partition_inertia(const Matrix& points) {
    const std::size_t n = points.size();
    const std::size_t dim = points[0].size();
    double best = std::numeric_limits<double>::infinity();
    for (std::uint64_t mask = 1; mask + 1 < (1ULL << n); ++mask) {
        if (mask & 1ULL) continue;  // each split once: point 0 always in group 0
        double total = 0.0;
        for (int g = 0; g < 2; ++g) {
            std::vector<double> mu(dim, 0.0);
            std::size_t cnt = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (((mask >> i) & 1ULL) == static_cast<std::uint64_t>(g)) {
                    for (std::size_t q = 0; q < dim; ++q) mu[q] += points[i][q];
                    ++cnt;
                }
            for (auto& v : mu) v /= static_cast<double>(cnt);
            for (std::size_t i = 0; i < n; ++i)
                if (((mask >> i) & 1ULL) == static_cast<std::uint64_t>(g))
                    for (std::size_t q = 0; q < dim; ++q) total += (points[i][q] - mu[q]) * (points[i][q] - mu[q]);
        }
        best = std::min(best, total);
    }
    return best;
}

std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> x, double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> out(n);
    for (auto& v : out) v = u(rng);
    return out;
}

Matrix uniform_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
    Matrix m(rows);
    for (auto& r : m) r = uniform(rng, cols, lo, hi);
    return m;
}

}  // namespace oracle
