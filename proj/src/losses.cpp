#include "mpfedkd/losses.hpp"

#include <cmath>

#include "mpfedkd/error.hpp"

namespace mpfedkd::losses {

using ad::Tensor;
using ad::Var;

void LossWeights::validate() const {
    if (!(mu1 >= 0.0 && mu1 <= 1.0)) throw ConfigError("mu1 must lie in [0, 1]");
    if (!(mu2 >= 0.0) || !(mu3 >= 0.0)) throw ConfigError("mu2 and mu3 must be non-negative");
    if (!(lemgp_balance > 0.0 && lemgp_balance <= 1.0)) throw ConfigError("LEMGP balance must lie in (0, 1]");
    if (!(lemgp_scale > 0.0)) throw ConfigError("LEMGP scale must be positive");
    if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
}

GlobalPrototypes::GlobalPrototypes(std::size_t num_classes, std::size_t dim) : dim_(dim), protos_(num_classes) {}

bool GlobalPrototypes::has(int c) const {
    return c >= 0 && static_cast<std::size_t>(c) < protos_.size() && protos_[static_cast<std::size_t>(c)].has_value();
}

std::span<const double> GlobalPrototypes::get(int c) const {
    if (!has(c)) throw Error("no global prototype for class " + std::to_string(c));
    return *protos_[static_cast<std::size_t>(c)];
}

void GlobalPrototypes::set(int c, std::vector<double> value) {
    if (c < 0 || static_cast<std::size_t>(c) >= protos_.size()) throw Error("prototype class out of range");
    if (value.size() != dim_)
        throw ShapeError("prototype width " + std::to_string(value.size()) + " differs from " + std::to_string(dim_));
    protos_[static_cast<std::size_t>(c)] = std::move(value);
}

std::vector<int> GlobalPrototypes::available() const {
    std::vector<int> out;
    for (std::size_t c = 0; c < protos_.size(); ++c)
        if (protos_[c]) out.push_back(static_cast<int>(c));
    return out;
}

PrototypeVars bind_prototypes(ad::Tape& tape, const GlobalPrototypes& protos, bool trainable) {
    PrototypeVars out;
    for (int c : protos.available()) {
        auto v = protos.get(c);
        Tensor t = Tensor::vector({v.begin(), v.end()});
        out.emplace(c, trainable ? tape.leaf(std::move(t)) : tape.constant(std::move(t)));
    }
    return out;
}

ClassGroups group_by_class(std::span<const int> labels) {
    std::map<int, std::vector<std::size_t>> m;
    for (std::size_t i = 0; i < labels.size(); ++i) m[labels[i]].push_back(i);
    ClassGroups g;
    for (auto& [c, rows] : m) {
        g.classes.push_back(c);
        g.rows.push_back(std::move(rows));
    }
    return g;
}

namespace {

Var zero(ad::Tape& tape) { return tape.constant(Tensor::scalar(0.0)); }

Var detached(const Var& v) { return v.tape().constant(v.value()); }

void require_matrix(const Var& v, const char* what) {
    if (v.value().rank() != 2) throw ShapeError(std::string(what) + " must be a matrix");
}

// mean over rows and dims of (rows - proto)^2
Var mean_sq_to(const Var& rows, const Var& proto) { return ad::mean(ad::square(ad::sub_row(rows, proto))); }

}  // namespace

Var ce_loss(const Var& logits, std::span<const int> labels) {
    require_matrix(logits, "logits");
    if (labels.size() != logits.shape()[0]) throw ShapeError("ce_loss: one label per row required");
    auto picked = ad::gather(ad::log_softmax_t(logits, 1.0), labels);
    return ad::neg(ad::mean(picked));
}

Var skd_loss(const Var& teacher_logits, const Var& student_logits, double tau) {
    if (!(tau > 0.0)) throw Error("skd_loss: temperature must be positive");
    if (teacher_logits.shape() != student_logits.shape())
        throw ShapeError("skd_loss: teacher " + ad::shape_string(teacher_logits.shape()) + " vs student " +
                         ad::shape_string(student_logits.shape()));
    require_matrix(student_logits, "student logits");
    auto& tape = student_logits.tape();
    const Tensor log_p = ad::log_softmax_rows(teacher_logits.value(), tau);
    Tensor p = log_p;
    for (auto& v : p.data()) v = std::exp(v);
    auto P = tape.constant(std::move(p));
    auto logP = tape.constant(log_p);
    auto logQ = ad::log_softmax_t(student_logits, tau);
    // sum_j p_j (log p_j - log q_j), summed over rows then divided by n
    auto kl = ad::sum(ad::mul(P, ad::sub(logP, logQ)));
    const double n = static_cast<double>(student_logits.shape()[0]);
    return ad::scale(kl, tau * tau / n);
}

PrototypeLoss pa_loss(const Var& previous_embeddings, std::span<const int> labels, const PrototypeVars& protos) {
    require_matrix(previous_embeddings, "embeddings");
    if (labels.size() != previous_embeddings.shape()[0]) throw ShapeError("pa_loss: one label per row required");
    auto E = detached(previous_embeddings);
    auto groups = group_by_class(labels);
    std::vector<Var> terms;
    for (std::size_t k = 0; k < groups.classes.size(); ++k) {
        auto it = protos.find(groups.classes[k]);
        if (it == protos.end()) continue;
        terms.push_back(mean_sq_to(ad::select_rows(E, groups.rows[k]), it->second));
    }
    if (terms.empty()) return {zero(E.tape()), true};
    return {ad::mean(ad::stack(terms)), false};
}

PrototypeLoss lemgp_attractive(const Var& embeddings, std::span<const int> labels, const PrototypeVars& protos,
                               double scale) {
    require_matrix(embeddings, "embeddings");
    if (labels.size() != embeddings.shape()[0]) throw ShapeError("lemgp_attractive: one label per row required");
    auto groups = group_by_class(labels);
    std::vector<Var> terms;
    for (std::size_t k = 0; k < groups.classes.size(); ++k) {
        auto it = protos.find(groups.classes[k]);
        if (it == protos.end()) continue;
        terms.push_back(mean_sq_to(ad::select_rows(embeddings, groups.rows[k]), detached(it->second)));
    }
    if (terms.empty()) return {zero(embeddings.tape()), true};
    return {ad::scale(ad::sum(ad::stack(terms)), scale), false};
}

Var lemgp_repulsive(const Var& embeddings, const PrototypeVars& protos, std::span<const int> classes, double scale) {
    require_matrix(embeddings, "embeddings");
    std::vector<Var> exponents;
    for (int c : classes) {
        auto it = protos.find(c);
        if (it == protos.end()) continue;
        exponents.push_back(ad::scale(mean_sq_to(embeddings, detached(it->second)), -scale));
    }
    if (exponents.empty()) throw Error("lemgp_repulsive: no class prototype available");
    return ad::logsumexp(ad::stack(exponents));
}

Var lemgp_loss(const Var& attractive, const Var& repulsive, double balance) {
    if (!(balance > 0.0 && balance <= 1.0)) throw Error("lemgp_loss: balance must lie in (0, 1]");
    return ad::add(ad::scale(attractive, balance), ad::scale(repulsive, 1.0 - balance));
}

Var local_loss(const Var& ce, const Var& skd, const Var& pa, const Var& lemgp, const LossWeights& w,
               std::size_t round) {
    if (round <= 1) return ce;
    auto total = ad::add(ad::scale(ce, w.mu1), ad::scale(skd, 1.0 - w.mu1));
    total = ad::add(total, ad::scale(pa, w.mu2));
    return ad::add(total, ad::scale(lemgp, w.mu3));
}

PrototypeLoss proto_regularizer(const Var& embeddings, std::span<const int> labels, const PrototypeVars& protos) {
    require_matrix(embeddings, "embeddings");
    if (labels.size() != embeddings.shape()[0]) throw ShapeError("proto_regularizer: one label per row required");
    auto& tape = embeddings.tape();
    auto groups = group_by_class(labels);
    std::vector<Var> terms;
    for (std::size_t k = 0; k < groups.classes.size(); ++k) {
        auto it = protos.find(groups.classes[k]);
        if (it == protos.end()) continue;
        const auto n = groups.rows[k].size();
        auto avg = tape.constant(Tensor({1, n}, std::vector<double>(n, 1.0 / static_cast<double>(n))));
        auto local = ad::matmul(avg, ad::select_rows(embeddings, groups.rows[k]));
        auto global = ad::reshape(detached(it->second), {1, it->second.value().size()});
        terms.push_back(ad::mean(ad::square(ad::sub(local, global))));
    }
    if (terms.empty()) return {zero(tape), true};
    return {ad::mean(ad::stack(terms)), false};
}

}  // namespace mpfedkd::losses
