#include "mpfedkd/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "mpfedkd/error.hpp"
#include "mpfedkd/metrics.hpp"
#include "mpfedkd/rng.hpp"

namespace mpfedkd::harness {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

model::BackboneSpec resolved_backbone(const ExperimentConfig& cfg, const data::Dataset& ds) {
    auto spec = cfg.backbone;
    spec.input_dim = ds.input_dim();
    spec.num_classes = ds.num_classes;
    if (spec.kind == model::BackboneKind::cnn && spec.channels * spec.height * spec.width != spec.input_dim)
        throw ConfigError("cnn input geometry " + std::to_string(spec.channels) + "x" + std::to_string(spec.height) +
                          "x" + std::to_string(spec.width) + " does not match " + std::to_string(spec.input_dim) +
                          " features");
    spec.validate();
    return spec;
}

std::string prototype_table_json(const losses::GlobalPrototypes& p, std::size_t round) {
    ordered_json j;
    j["round"] = round;
    j["dim"] = p.dim();
    ordered_json classes = ordered_json::object();
    for (int c : p.available()) {
        auto v = p.get(c);
        classes[std::to_string(c)] = std::vector<double>(v.begin(), v.end());
    }
    j["classes"] = classes;
    return j.dump(2) + "\n";
}

std::string round_tag(std::size_t round) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "round_%04zu", round);
    return buf;
}

}  // namespace

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("failed while writing " + path.string());
}

double median(std::vector<double> values) {
    if (values.empty()) throw Error("median of an empty set");
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

data::Dataset load_dataset(const ExperimentConfig& cfg) {
    const auto& d = cfg.data;
    const auto seed = cfg.federation.seed;
    if (d.source == "blobs") {
        auto a = data::synth_blobs(d.classes, d.per_class, d.dim, d.spread, seed, d.radius, 0);
        if (d.domains == 1) return a;
        auto b = data::synth_blobs(d.classes, d.per_class, d.dim, d.spread, derive_seed(seed, {stream::data, 2}),
                                   d.radius, 1);
        return data::concat_domains(a, b, "blobs-2domain");
    }
    if (d.source == "idx") {
        auto a = data::load_idx(d.images, d.labels, d.limit, 0);
        if (d.images_b.empty()) return a;
        return data::concat_domains(a, data::load_idx(d.images_b, d.labels_b, d.limit, 1));
    }
    throw ConfigError("unknown data source '" + d.source + "'");
}

data::PartitionPlan make_partition(const data::Dataset& ds, const ExperimentConfig& cfg) {
    data::PartitionOptions opt;
    opt.clients = cfg.partition.clients;
    opt.alpha = cfg.partition.alpha;
    opt.test_fraction = cfg.data.test_fraction;
    opt.heterogeneity = cfg.partition.heterogeneity;
    opt.seed = cfg.federation.seed;
    return data::partition_dirichlet(ds, opt);
}

Summary summarize(const ExperimentConfig& cfg, std::span<const fl::RoundRecord> rounds) {
    if (rounds.empty()) throw Error("no rounds to summarize");
    Summary s;
    s.method = fl::to_string(cfg.federation.method);
    s.seed = cfg.federation.seed;
    s.alpha = cfg.partition.alpha;
    s.rounds = rounds.size();
    std::vector<double> accs;
    for (const auto& r : rounds) {
        accs.push_back(r.metrics.accuracy);
        if (r.metrics.accuracy > s.best_acc || s.best_round == 0) {
            s.best_acc = r.metrics.accuracy;
            s.best_round = r.round;
        }
        s.bytes_up += r.bytes_up;
        s.bytes_down += r.bytes_down;
    }
    s.average_accuracy = metrics::average_accuracy(accs);
    const auto& last = rounds.back().metrics;
    s.final_acc = last.accuracy;
    s.final_rmse = last.rmse;
    s.final_mae = last.mae;
    s.final_macro_f1 = last.macro_f1;
    return s;
}

std::string rounds_csv(std::span<const fl::RoundRecord> rounds) {
    std::string out = std::string(kRoundsHeader) + "\n";
    for (const auto& r : rounds) {
        std::string sel;
        for (std::size_t i = 0; i < r.selected.size(); ++i) sel += (i ? ";" : "") + std::to_string(r.selected[i]);
        out += std::to_string(r.round) + "," + sel + "," + num(r.losses.ce) + "," + num(r.losses.skd) + "," +
               num(r.losses.pa) + "," + num(r.losses.lemgp) + "," + num(r.losses.total) + "," +
               num(r.metrics.accuracy) + "," + num(r.metrics.rmse) + "," + num(r.metrics.mae) + "," +
               num(r.metrics.macro_f1) + "," + std::to_string(r.bytes_up) + "," + std::to_string(r.bytes_down) + "\n";
    }
    return out;
}

std::string summary_json(const Summary& s) {
    ordered_json j;
    j["method"] = s.method;
    j["seed"] = s.seed;
    j["alpha"] = s.alpha;
    j["rounds"] = s.rounds;
    j["final_acc"] = s.final_acc;
    j["average_accuracy"] = s.average_accuracy;
    j["average_accuracy_definition"] = "mean of per-round global test accuracy over all rounds";
    j["best_acc"] = s.best_acc;
    j["best_round"] = s.best_round;
    j["final_rmse"] = s.final_rmse;
    j["final_mae"] = s.final_mae;
    j["final_macro_f1"] = s.final_macro_f1;
    j["bytes_up"] = s.bytes_up;
    j["bytes_down"] = s.bytes_down;
    return j.dump(2) + "\n";
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::optional<fs::path>& out_dir,
                         const RoundCallback& on_round) {
    cfg.validate();
    const auto ds = load_dataset(cfg);
    const auto spec = resolved_backbone(cfg, ds);

    RunResult result;
    result.plan = make_partition(ds, cfg);
    if (out_dir) {
        fs::create_directories(*out_dir);
        write_text(*out_dir / "config.ini", cfg.to_ini());
        write_text(*out_dir / "partition.json", result.plan.to_json() + "\n");
    }

    auto fed = fl::make_federation(ds, result.plan, spec, cfg.federation);
    std::string timing = "round,wall_seconds\n";
    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        auto rec = fl::run_round(fed.server, fed.clients, ds, fed.topology, cfg.federation);
        timing += std::to_string(rec.round) + "," + num(rec.wall_seconds) + "\n";
        if (out_dir && cfg.checkpoints) {
            const auto dir = *out_dir / "checkpoints";
            fs::create_directories(dir);
            fed.server.global.snapshot(rec.round).write(dir / (round_tag(rec.round) + ".snap"));
            write_text(dir / (round_tag(rec.round) + "_prototypes.json"),
                       prototype_table_json(fed.server.prototypes, rec.round));
        }
        if (on_round) on_round(rec);
        result.rounds.push_back(std::move(rec));
    }

    result.summary = summarize(cfg, result.rounds);
    if (out_dir) {
        write_text(*out_dir / "rounds.csv", rounds_csv(result.rounds));
        write_text(*out_dir / "summary.json", summary_json(result.summary));
        write_text(*out_dir / "timing.csv", timing);
    }
    return result;
}

// ---------------------------------------------------------------- comparisons

std::string ClustererComparison::csv() const {
    std::string out = "round,seed,chac_acc,kmeans_acc\n";
    for (std::size_t s = 0; s < seeds.size(); ++s)
        for (std::size_t t = 0; t < chac_acc[s].size(); ++t)
            out += std::to_string(t + 1) + "," + std::to_string(seeds[s]) + "," + num(chac_acc[s][t]) + "," +
                   num(kmeans_acc[s][t]) + "\n";
    return out;
}

std::string ClustererComparison::json() const {
    ordered_json j;
    j["seeds"] = seeds;
    j["chac_median_final_acc"] = chac_median_final;
    j["kmeans_median_final_acc"] = kmeans_median_final;
    return j.dump(2) + "\n";
}

ClustererComparison compare_clusterers(const ExperimentConfig& cfg, std::span<const std::uint64_t> seeds) {
    if (seeds.empty()) throw ConfigError("compare-clusterers needs at least one seed");
    ClustererComparison out;
    std::vector<double> chac_final, kmeans_final;
    for (auto seed : seeds) {
        out.seeds.push_back(seed);
        for (auto method : {fl::Method::mp_fedkd, fl::Method::mp_fedkd_kmeans}) {
            auto c = cfg;
            c.federation.seed = seed;
            c.federation.method = method;
            auto run = run_experiment(c);
            std::vector<double> accs;
            for (const auto& r : run.rounds) accs.push_back(r.metrics.accuracy);
            auto& series = method == fl::Method::mp_fedkd ? out.chac_acc : out.kmeans_acc;
            auto& finals = method == fl::Method::mp_fedkd ? chac_final : kmeans_final;
            finals.push_back(accs.back());
            series.push_back(std::move(accs));
        }
    }
    out.chac_median_final = median(chac_final);
    out.kmeans_median_final = median(kmeans_final);
    return out;
}

std::vector<Summary> sweep_alpha(const ExperimentConfig& cfg, std::span<const double> alphas) {
    std::vector<Summary> out;
    for (double a : alphas) {
        auto c = cfg;
        c.partition.alpha = a;
        out.push_back(run_experiment(c).summary);
    }
    return out;
}

std::string sweep_csv(std::span<const Summary> rows) {
    std::string out = "alpha,method,seed,average_accuracy,final_acc,best_acc,final_rmse,final_mae,final_macro_f1\n";
    for (const auto& s : rows)
        out += num(s.alpha) + "," + s.method + "," + std::to_string(s.seed) + "," + num(s.average_accuracy) + "," +
               num(s.final_acc) + "," + num(s.best_acc) + "," + num(s.final_rmse) + "," + num(s.final_mae) + "," +
               num(s.final_macro_f1) + "\n";
    return out;
}

std::vector<AblationRow> ablation(const ExperimentConfig& cfg, std::span<const std::uint64_t> seeds) {
    std::vector<AblationRow> out;
    for (auto seed : seeds) {
        for (const char* variant : {"w/o PA", "w/o LEMGP", "full"}) {
            auto c = cfg;
            c.federation.seed = seed;
            const std::string v = variant;
            if (v == "w/o PA") c.federation.weights.mu2 = 0.0;
            if (v == "w/o LEMGP") c.federation.weights.mu3 = 0.0;
            out.push_back({v, seed, run_experiment(c).summary});
        }
    }
    return out;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
    std::string out = "variant,seed,final_acc,average_accuracy,best_acc,final_rmse,final_mae,final_macro_f1\n";
    for (const auto& r : rows)
        out += r.variant + "," + std::to_string(r.seed) + "," + num(r.summary.final_acc) + "," +
               num(r.summary.average_accuracy) + "," + num(r.summary.best_acc) + "," + num(r.summary.final_rmse) + "," +
               num(r.summary.final_mae) + "," + num(r.summary.final_macro_f1) + "\n";
    return out;
}

}  // namespace mpfedkd::harness
