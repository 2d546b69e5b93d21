#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mpfedkd/error.hpp"
#include "mpfedkd/experiment.hpp"

using namespace mpfedkd;
namespace fs = std::filesystem;

namespace {

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> method;
    std::optional<double> alpha;
    std::optional<std::size_t> clients;
    std::optional<std::size_t> rounds;
    std::optional<std::string> out;
    std::optional<std::size_t> workers;

    void attach(CLI::App* app, bool with_out = true) {
        app->add_option("--seed", seed, "Experiment seed");
        app->add_option("--method", method, "mp-fedkd | mp-fedkd-kmeans | fedavg | fedprox | fedproto");
        app->add_option("--alpha", alpha, "Dirichlet concentration");
        app->add_option("--clients", clients, "Number of clients");
        app->add_option("--rounds", rounds, "Communication rounds");
        app->add_option("--workers", workers, "Parallel client workers");
        if (with_out) app->add_option("--out", out, "Output directory");
    }

    harness::ExperimentConfig apply(harness::ExperimentConfig cfg) const {
        if (seed) cfg.federation.seed = *seed;
        if (method) cfg.federation.method = fl::parse_method(*method);
        if (alpha) cfg.partition.alpha = *alpha;
        if (clients) cfg.partition.clients = *clients;
        if (rounds) cfg.rounds = *rounds;
        if (out) cfg.out = *out;
        if (workers) cfg.federation.workers = *workers;
        cfg.validate();
        return cfg;
    }
};

void print_round(const fl::RoundRecord& r) {
    std::printf("round %3zu  acc %.4f  f1 %.4f  loss %.5f  (%.2fs)\n", r.round, r.metrics.accuracy,
                r.metrics.macro_f1, r.losses.total, r.wall_seconds);
    std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-prototype federated knowledge distillation simulator"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides ov;
    bool quiet = false;

    auto* run = app.add_subcommand("run", "Run one federated experiment");
    run->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    run->add_flag("--quiet", quiet, "No per-round progress");
    ov.attach(run);

    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    auto* cmp = app.add_subcommand("compare-clusterers", "CHAC against K-Means prototypes, shared seeds");
    cmp->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    cmp->add_option("--seeds", seeds, "Seeds")->delimiter(',');
    ov.attach(cmp);

    auto* audit = app.add_subcommand("partition-audit", "Print the client partition as JSON");
    audit->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    ov.attach(audit, false);

    std::vector<double> alphas{0.3, 0.5, 0.7, 0.9};
    auto* sweep = app.add_subcommand("sweep-alpha", "Average accuracy across Dirichlet concentrations");
    sweep->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    sweep->add_option("--alphas", alphas, "Concentrations")->delimiter(',');
    ov.attach(sweep);

    auto* abl = app.add_subcommand("ablate", "Full method against w/o PA and w/o LEMGP");
    abl->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    abl->add_option("--seeds", seeds, "Seeds")->delimiter(',');
    ov.attach(abl);

    CLI11_PARSE(app, argc, argv);

    try {
        const auto cfg = ov.apply(harness::load_config(config_path));
        const fs::path out = cfg.out;

        if (*run) {
            auto result = harness::run_experiment(cfg, out, quiet ? harness::RoundCallback{} : print_round);
            std::printf("final acc %.4f  average acc %.4f  -> %s\n", result.summary.final_acc,
                        result.summary.average_accuracy, out.string().c_str());
        } else if (*cmp) {
            auto c = harness::compare_clusterers(cfg, seeds);
            harness::write_text(out / "clusterers.csv", c.csv());
            harness::write_text(out / "clusterers.json", c.json());
            std::printf("median final acc  chac %.4f  kmeans %.4f\n", c.chac_median_final, c.kmeans_median_final);
        } else if (*audit) {
            const auto ds = harness::load_dataset(cfg);
            std::cout << harness::make_partition(ds, cfg).to_json() << "\n";
        } else if (*sweep) {
            auto rows = harness::sweep_alpha(cfg, alphas);
            harness::write_text(out / "alpha_sweep.csv", harness::sweep_csv(rows));
            for (const auto& s : rows) std::printf("alpha %.3g  average acc %.4f\n", s.alpha, s.average_accuracy);
        } else if (*abl) {
            auto rows = harness::ablation(cfg, seeds);
            harness::write_text(out / "ablation.csv", harness::ablation_csv(rows));
            for (const auto& r : rows)
                std::printf("%-10s seed %llu  final acc %.4f\n", r.variant.c_str(),
                            static_cast<unsigned long long>(r.seed), r.summary.final_acc);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
