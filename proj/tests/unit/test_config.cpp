#include "doctest.h"
#include "mpfedkd/config.hpp"
#include "mpfedkd/error.hpp"

using namespace mpfedkd;
using namespace mpfedkd::harness;

TEST_SUITE("config") {
    TEST_CASE("ini parsing") {
        auto ini = parse_ini("# comment\n[experiment]\nmethod = fedavg ; not a comment\n\n[data]\n  classes=4  \n; x\n");
        CHECK(ini.at("experiment").at("method") == "fedavg ; not a comment");
        CHECK(ini.at("data").at("classes") == "4");
        CHECK_THROWS_AS(parse_ini("key = 1\n"), ConfigError);
        CHECK_THROWS_AS(parse_ini("[a]\nx = 1\nx = 2\n"), ConfigError);
        CHECK_THROWS_AS(parse_ini("[a]\nno equals sign\n"), ConfigError);
        CHECK_THROWS_AS(parse_ini("[a\n"), ConfigError);
        try {
            parse_ini("[a]\nx = 1\nbroken\n");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("3") != std::string::npos);
        }
    }

    TEST_CASE("values land in the right fields") {
        auto cfg = apply_ini(parse_ini(R"(
[experiment]
method = fedprox
seed = 17
rounds = 3
checkpoints = true
[data]
per_class = 50
spread = 0.25
[partition]
clients = 6
alpha = 0.9
heterogeneity = distinct-domain
[model]
backbone = linear
embedding_dim = 5
[training]
learning_rate = 0.01
workers = 3
prox_rho = 0.5
[loss]
mu1 = 0.8
tau = 0.5
[prototypes]
per_class = 2
aggregation = literal
per_batch = yes
)"));
        CHECK(cfg.federation.method == fl::Method::fedprox);
        CHECK(cfg.federation.seed == 17);
        CHECK(cfg.rounds == 3);
        CHECK(cfg.checkpoints);
        CHECK(cfg.data.per_class == 50);
        CHECK(cfg.data.spread == 0.25);
        CHECK(cfg.partition.clients == 6);
        CHECK(cfg.partition.alpha == 0.9);
        CHECK(cfg.partition.heterogeneity == data::Heterogeneity::distinct_domain);
        CHECK(cfg.backbone.kind == model::BackboneKind::linear);
        CHECK(cfg.backbone.embedding_dim == 5);
        CHECK(cfg.federation.learning_rate == 0.01);
        CHECK(cfg.federation.workers == 3);
        CHECK(cfg.federation.prox_rho == 0.5);
        CHECK(cfg.federation.weights.mu1 == 0.8);
        CHECK(cfg.federation.weights.tau == 0.5);
        CHECK(cfg.federation.prototypes_per_class == 2);
        CHECK(cfg.federation.aggregation == fl::PrototypeAggregation::literal);
        CHECK(cfg.federation.per_batch_prototypes);
    }

    TEST_CASE("unknown or malformed entries are rejected") {
        CHECK_THROWS_AS(apply_ini(parse_ini("[training]\nlearning_rat = 0.1\n")), ConfigError);
        CHECK_THROWS_AS(apply_ini(parse_ini("[optimizer]\nlr = 0.1\n")), ConfigError);
        CHECK_THROWS_AS(apply_ini(parse_ini("[training]\nepochs = five\n")), ConfigError);
        CHECK_THROWS_AS(apply_ini(parse_ini("[training]\nepochs = -2\n")), ConfigError);
        CHECK_THROWS_AS(apply_ini(parse_ini("[training]\nlearning_rate = 0.1x\n")), ConfigError);
        CHECK_THROWS_AS(apply_ini(parse_ini("[experiment]\ncheckpoints = maybe\n")), ConfigError);
        CHECK_THROWS_AS(apply_ini(parse_ini("[experiment]\nmethod = scaffold\n")), ConfigError);
    }

    TEST_CASE("validation") {
        ExperimentConfig c;
        CHECK_NOTHROW(c.validate());
        c.partition.alpha = 0.0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = {};
        c.rounds = 0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = {};
        c.federation.weights.tau = 0.0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = {};
        c.data.source = "csv";
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }

    TEST_CASE("resolved config reads back to the same values") {
        ExperimentConfig c;
        c.federation.method = fl::Method::mp_fedkd_kmeans;
        c.federation.learning_rate = 0.1 + 0.2;
        c.federation.weights.lemgp_balance = 1.0 / 3.0;
        c.partition.alpha = 0.7;
        c.data.images = "some/path";
        c.backbone.kind = model::BackboneKind::cnn;
        auto back = apply_ini(parse_ini(c.to_ini()));
        CHECK(back.to_ini() == c.to_ini());
        CHECK(back.federation.learning_rate == c.federation.learning_rate);
        CHECK(back.federation.weights.lemgp_balance == c.federation.weights.lemgp_balance);
        CHECK(back.data.images == "some/path");
    }

    TEST_CASE("missing config file") {
        CHECK_THROWS(load_config("/nonexistent/mpfedkd.ini"));
    }
}
