#include <cmath>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "mpfedkd/error.hpp"
#include "mpfedkd/losses.hpp"
#include "oracles.hpp"

using namespace mpfedkd;
using namespace mpfedkd::ad;
using namespace mpfedkd::losses;

namespace {

Tensor to_tensor(const oracle::Matrix& m) {
    std::vector<double> flat;
    for (const auto& r : m) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor::matrix(m.size(), m[0].size(), flat);
}

PrototypeVars protos_on(Tape& tape, const oracle::Protos& p, bool trainable = false) {
    PrototypeVars out;
    for (const auto& [c, v] : p) out.emplace(c, trainable ? tape.leaf(Tensor::vector(v)) : tape.constant(Tensor::vector(v)));
    return out;
}

std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n, int classes) {
    std::uniform_int_distribution<int> d(0, classes - 1);
    std::vector<int> out(n);
    for (auto& l : out) l = d(rng);
    return out;
}

oracle::Protos random_protos(std::mt19937_64& rng, int classes, std::size_t dim) {
    oracle::Protos p;
    for (int c = 0; c < classes; ++c) p[c] = oracle::uniform(rng, dim, -1.0, 1.0);
    return p;
}

double scalar(const Var& v) { return v.value().item(); }

constexpr int kInstances = 20;
constexpr double kTol = 1e-4;

}  // namespace

TEST_SUITE("losses") {
    TEST_CASE("cross-entropy values") {
        Tape tape;
        std::vector<int> zero{0};
        CHECK(scalar(ce_loss(tape.constant(Tensor::matrix(1, 2, {0, 0})), zero)) == doctest::Approx(std::log(2.0)));
        CHECK(scalar(ce_loss(tape.constant(Tensor::matrix(1, 2, {1, 0})), zero)) ==
              doctest::Approx(0.3133).epsilon(1e-4));
        double prev = 1e9;
        for (double margin : {1.0, 5.0, 20.0, 50.0}) {
            const double v = scalar(ce_loss(tape.constant(Tensor::matrix(1, 2, {margin, 0})), zero));
            CHECK(v < prev);
            prev = v;
        }
        CHECK(prev < 1e-20);
        std::vector<int> two{0, 1};
        CHECK_THROWS_AS(ce_loss(tape.constant(Tensor::matrix(1, 2, {0, 0})), two), ShapeError);
    }

    TEST_CASE("distillation values") {
        Tape tape;
        auto t = tape.constant(Tensor::matrix(1, 2, {1, 0}));
        auto s = tape.constant(Tensor::matrix(1, 2, {0, 1}));
        CHECK(scalar(skd_loss(t, t, 0.7)) == doctest::Approx(0.0).epsilon(1e-15));
        CHECK(std::abs(scalar(skd_loss(t, s, 1.0)) - 0.4621) <= 1e-3);
        CHECK_THROWS_AS(skd_loss(t, tape.constant(Tensor::matrix(1, 3, {0, 1, 2})), 1.0), ShapeError);
        CHECK_THROWS(skd_loss(t, s, 0.0));
    }

    TEST_CASE("distillation is non-negative and shift invariant") {
        std::mt19937_64 rng(12);
        std::uniform_real_distribution<double> tau(0.05, 5.0), shift(-10.0, 10.0);
        for (int i = 0; i < 100; ++i) {
            auto a = gradcheck::random_tensor(rng, {4, 5}, -3, 3);
            auto b = gradcheck::random_tensor(rng, {4, 5}, -3, 3);
            const double t = tau(rng), k = shift(rng);
            Tape tape;
            const double base = scalar(skd_loss(tape.constant(a), tape.constant(b), t));
            CHECK(base >= -1e-12);
            Tensor as = a, bs = b;
            for (auto& v : as.data()) v += k;
            for (auto& v : bs.data()) v += k;
            CHECK(scalar(skd_loss(tape.constant(as), tape.constant(bs), t)) == doctest::Approx(base).epsilon(1e-9));
        }
    }

    TEST_CASE("prototype alignment values") {
        Tape tape;
        std::vector<int> one{0};
        auto on = pa_loss(tape.constant(Tensor::matrix(1, 2, {0.5, -1})), one, protos_on(tape, {{0, {0.5, -1}}}));
        CHECK(scalar(on.value) == 0.0);
        CHECK_FALSE(on.no_overlap);
        auto unit = pa_loss(tape.constant(Tensor::matrix(1, 2, {1, 1})), one, protos_on(tape, {{0, {0, 0}}}));
        CHECK(scalar(unit.value) == doctest::Approx(1.0));
        // class 0 mean-square 1, class 1 mean-square 3, two samples each
        std::vector<int> labels{0, 0, 1, 1};
        auto e = tape.constant(Tensor::matrix(4, 1, {1, -1, std::sqrt(3.0), -std::sqrt(3.0)}));
        auto avg = pa_loss(e, labels, protos_on(tape, {{0, {0}}, {1, {0}}}));
        CHECK(scalar(avg.value) == doctest::Approx(2.0));
    }

    TEST_CASE("prototype losses skip classes without a prototype") {
        Tape tape;
        std::vector<int> labels{0, 1};
        auto e = tape.constant(Tensor::matrix(2, 1, {3, 100}));
        auto only0 = protos_on(tape, {{0, {1}}});
        CHECK(scalar(pa_loss(e, labels, only0).value) == doctest::Approx(4.0));
        CHECK(scalar(lemgp_attractive(e, labels, only0, 0.5).value) == doctest::Approx(2.0));
        auto none = protos_on(tape, {{2, {0}}});
        auto pa = pa_loss(e, labels, none);
        CHECK(pa.no_overlap);
        CHECK(scalar(pa.value) == 0.0);
        CHECK(lemgp_attractive(e, labels, none, 0.5).no_overlap);
        std::vector<int> classes{0, 1};
        CHECK_THROWS(lemgp_repulsive(e, none, classes, 0.5));
    }

    TEST_CASE("attractive, repulsive and combined values") {
        Tape tape;
        std::vector<int> one{0};
        std::vector<int> classes{0};
        auto at_proto = tape.constant(Tensor::matrix(1, 1, {0}));
        auto two = tape.constant(Tensor::matrix(1, 1, {2}));
        auto p = protos_on(tape, {{0, {0}}});
        CHECK(scalar(lemgp_attractive(at_proto, one, p, 0.5).value) == 0.0);
        CHECK(scalar(lemgp_attractive(two, one, p, 0.5).value) == doctest::Approx(2.0));
        CHECK(scalar(lemgp_repulsive(at_proto, p, classes, 0.5)) == doctest::Approx(0.0));
        CHECK(scalar(lemgp_repulsive(two, p, classes, 0.5)) == doctest::Approx(-2.0));

        auto att = tape.constant(Tensor::scalar(2.0));
        auto rep = tape.constant(Tensor::scalar(-2.0));
        CHECK(scalar(lemgp_loss(att, rep, 0.5)) == doctest::Approx(0.0).epsilon(1e-15));
        CHECK(scalar(lemgp_loss(att, rep, 1.0)) == doctest::Approx(2.0));
        for (double b : {0.1, 0.5, 0.9, 1.0}) CHECK(scalar(lemgp_loss(att, att, b)) == doctest::Approx(2.0));
        CHECK_THROWS(lemgp_loss(att, rep, 0.0));
    }

    TEST_CASE("local loss composition") {
        Tape tape;
        LossWeights w;
        auto c = [&](double v) { return tape.constant(Tensor::scalar(v)); };
        CHECK(scalar(local_loss(c(1), c(1), c(1), c(1), w, 2)) == doctest::Approx(2.1));
        CHECK(scalar(local_loss(c(0), c(0), c(0), c(0), w, 5)) == 0.0);
        std::mt19937_64 rng(3);
        for (int i = 0; i < 20; ++i) {
            auto v = oracle::uniform(rng, 4, -5, 5);
            auto ce = c(v[0]);
            CHECK(scalar(local_loss(ce, c(v[1]), c(v[2]), c(v[3]), w, 1)) == v[0]);
        }
        LossWeights bad;
        bad.mu1 = 1.5;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
        bad = {};
        bad.lemgp_balance = 0.0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
    }

    TEST_CASE("kernels agree with plain-double references") {
        std::mt19937_64 rng(99);
        for (int i = 0; i < 50; ++i) {
            const int C = 4;
            const std::size_t n = 7, q = 3;
            auto logits = oracle::uniform_matrix(rng, n, C, -3, 3);
            auto teacher = oracle::uniform_matrix(rng, n, C, -3, 3);
            auto emb = oracle::uniform_matrix(rng, n, q, -2, 2);
            auto labels = random_labels(rng, n, C);
            auto protos = random_protos(rng, C, q);
            protos.erase(1);
            std::vector<int> classes{0, 2, 3};
            Tape tape;
            auto pv = protos_on(tape, protos);
            auto E = tape.constant(to_tensor(emb));
            CHECK(scalar(ce_loss(tape.constant(to_tensor(logits)), labels)) ==
                  doctest::Approx(oracle::ce(logits, labels)).epsilon(1e-12));
            CHECK(scalar(skd_loss(tape.constant(to_tensor(teacher)), tape.constant(to_tensor(logits)), 0.4)) ==
                  doctest::Approx(oracle::skd(teacher, logits, 0.4)).epsilon(1e-10));
            CHECK(scalar(pa_loss(E, labels, pv).value) == doctest::Approx(oracle::pa(emb, labels, protos)).epsilon(1e-12));
            CHECK(scalar(lemgp_attractive(E, labels, pv, 0.5).value) ==
                  doctest::Approx(oracle::attractive(emb, labels, protos, 0.5)).epsilon(1e-12));
            CHECK(scalar(lemgp_repulsive(E, pv, classes, 0.5)) ==
                  doctest::Approx(oracle::repulsive(emb, protos, classes, 0.5)).epsilon(1e-12));
            auto lem = lemgp_loss(lemgp_attractive(E, labels, pv, 0.5).value, lemgp_repulsive(E, pv, classes, 0.5), 0.3);
            CHECK(scalar(lem) == doctest::Approx(oracle::lemgp(emb, labels, protos, classes, 0.5, 0.3)).epsilon(1e-12));
        }
    }

    TEST_CASE("repulsive term ignores the order of classes") {
        std::mt19937_64 rng(4);
        auto emb = gradcheck::random_tensor(rng, {5, 3});
        auto protos = random_protos(rng, 4, 3);
        Tape tape;
        auto pv = protos_on(tape, protos);
        auto E = tape.constant(emb);
        std::vector<int> a{0, 1, 2, 3}, b{3, 1, 0, 2};
        CHECK(scalar(lemgp_repulsive(E, pv, a, 0.5)) == doctest::Approx(scalar(lemgp_repulsive(E, pv, b, 0.5))).epsilon(1e-14));
    }

    TEST_CASE("alignment moves prototypes only") {
        Tape tape;
        std::vector<int> labels{0, 1};
        auto e = tape.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
        auto pv = protos_on(tape, {{0, {0, 0}}, {1, {1, 1}}}, true);
        auto g = tape.backward(pa_loss(e, labels, pv).value);
        CHECK(g.of(e) == Tensor::zeros({2, 2}));
        CHECK_FALSE(g.of(pv.at(0)) == Tensor::zeros({2}));
    }

    TEST_CASE("every loss kernel matches central differences") {
        std::mt19937_64 rng(2718);
        const int C = 3;
        const std::size_t n = 6, q = 3;
        auto check = [&](const char* name, const gradcheck::Builder& f, const std::vector<Tensor>& inputs) {
            const double err = gradcheck::relative_error(f, inputs);
            INFO(std::string(name) << " relative error " << err);
            CHECK(err < kTol);
        };
        for (int i = 0; i < kInstances; ++i) {
            auto labels = random_labels(rng, n, C);
            auto protos = random_protos(rng, C, q);
            auto logits = gradcheck::random_tensor(rng, {n, static_cast<std::size_t>(C)});
            auto teacher = gradcheck::random_tensor(rng, {n, static_cast<std::size_t>(C)});
            auto emb = gradcheck::random_tensor(rng, {n, q});
            std::vector<int> classes{0, 1, 2};
            Tensor p0 = Tensor::vector(protos[0]), p1 = Tensor::vector(protos[1]), p2 = Tensor::vector(protos[2]);

            check("ce", [&](Tape&, const std::vector<Var>& v) { return ce_loss(v[0], labels); }, {logits});
            check("skd", [&](Tape& t, const std::vector<Var>& v) { return skd_loss(t.constant(teacher), v[0], 0.5); },
                  {logits});
            check("pa wrt prototypes",
                  [&](Tape& t, const std::vector<Var>& v) {
                      PrototypeVars pv{{0, v[0]}, {1, v[1]}, {2, v[2]}};
                      return pa_loss(t.constant(emb), labels, pv).value;
                  },
                  {p0, p1, p2});
            check("attractive wrt embeddings",
                  [&](Tape& t, const std::vector<Var>& v) {
                      return lemgp_attractive(v[0], labels, protos_on(t, protos), 0.5).value;
                  },
                  {emb});
            check("repulsive wrt embeddings",
                  [&](Tape& t, const std::vector<Var>& v) {
                      return lemgp_repulsive(v[0], protos_on(t, protos), classes, 0.5);
                  },
                  {emb});
            check("lemgp wrt embeddings",
                  [&](Tape& t, const std::vector<Var>& v) {
                      auto pv = protos_on(t, protos);
                      return lemgp_loss(lemgp_attractive(v[0], labels, pv, 0.5).value,
                                        lemgp_repulsive(v[0], pv, classes, 0.5), 0.5);
                  },
                  {emb});
            check("fedproto regularizer",
                  [&](Tape& t, const std::vector<Var>& v) {
                      return proto_regularizer(v[0], labels, protos_on(t, protos)).value;
                  },
                  {emb});
            check("local loss",
                  [&](Tape& t, const std::vector<Var>& v) {
                      // v[0] logits, v[1] embeddings, v[2..4] prototypes
                      PrototypeVars pv{{0, v[2]}, {1, v[3]}, {2, v[4]}};
                      auto ce = ce_loss(v[0], labels);
                      auto skd = skd_loss(t.constant(teacher), v[0], 0.5);
                      auto pa = pa_loss(t.constant(emb), labels, pv).value;
                      // the margin term holds prototypes fixed
                      auto fixed = protos_on(t, protos);
                      auto lem = lemgp_loss(lemgp_attractive(v[1], labels, fixed, 0.5).value,
                                            lemgp_repulsive(v[1], fixed, classes, 0.5), 0.5);
                      return local_loss(ce, skd, pa, lem, LossWeights{}, 2);
                  },
                  {logits, emb, p0, p1, p2});
        }
    }

    TEST_CASE("global prototype store") {
        GlobalPrototypes g(3, 2);
        CHECK(g.empty());
        g.set(1, {0.5, 0.5});
        CHECK(g.has(1));
        CHECK_FALSE(g.has(0));
        CHECK(g.available() == std::vector<int>{1});
        CHECK_THROWS(g.get(0));
        CHECK_THROWS_AS(g.set(2, {1.0}), ShapeError);
        CHECK_THROWS(g.set(3, {1.0, 1.0}));
        Tape tape;
        auto pv = bind_prototypes(tape, g);
        REQUIRE(pv.size() == 1);
        CHECK_FALSE(pv.at(1).requires_grad());
    }
}
