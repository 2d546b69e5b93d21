#pragma once

// End-to-end runs and the tables built from them.
//
// Files written into a run directory:
//   config.ini      resolved configuration
//   partition.json  client shards
//   rounds.csv      one row per round, header kRoundsHeader
//   summary.json    final / average / best accuracy and final errors
//   timing.csv      round,wall_seconds (kept out of rounds.csv so that it
//                   stays byte-identical across repeated runs)
//   checkpoints/    round_NNNN.snap and round_NNNN_prototypes.json, if enabled

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpfedkd/config.hpp"
#include "mpfedkd/data.hpp"
#include "mpfedkd/federation.hpp"

namespace mpfedkd::harness {

inline constexpr const char* kRoundsHeader =
    "round,selected,ce,skd,pa,lemgp,loss,acc,rmse,mae,macro_f1,bytes_up,bytes_down";

struct Summary {
    std::string method;
    std::uint64_t seed = 0;
    double alpha = 0.0;
    std::size_t rounds = 0;
    double final_acc = 0.0;
    double average_accuracy = 0.0;  // mean global accuracy over all rounds
    double best_acc = 0.0;
    std::size_t best_round = 0;
    double final_rmse = 0.0;
    double final_mae = 0.0;
    double final_macro_f1 = 0.0;
    std::uint64_t bytes_up = 0;
    std::uint64_t bytes_down = 0;
};

struct RunResult {
    data::PartitionPlan plan;
    std::vector<fl::RoundRecord> rounds;
    Summary summary;
};

data::Dataset load_dataset(const ExperimentConfig& cfg);
data::PartitionPlan make_partition(const data::Dataset& ds, const ExperimentConfig& cfg);

using RoundCallback = std::function<void(const fl::RoundRecord&)>;

// Runs cfg.rounds rounds. When out_dir is set every output file is written
// there; otherwise nothing touches the filesystem.
RunResult run_experiment(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& out_dir = {},
                         const RoundCallback& on_round = {});

Summary summarize(const ExperimentConfig& cfg, std::span<const fl::RoundRecord> rounds);

std::string rounds_csv(std::span<const fl::RoundRecord> rounds);
std::string summary_json(const Summary& s);

// Same config and seed, CHAC against K-Means prototypes.
struct ClustererComparison {
    std::vector<std::uint64_t> seeds;
    std::vector<std::vector<double>> chac_acc;    // [seed][round]
    std::vector<std::vector<double>> kmeans_acc;  // [seed][round]
    double chac_median_final = 0.0;
    double kmeans_median_final = 0.0;

    std::string csv() const;  // round,seed,chac_acc,kmeans_acc
    std::string json() const;
};

ClustererComparison compare_clusterers(const ExperimentConfig& cfg, std::span<const std::uint64_t> seeds);

// One summary per Dirichlet concentration.
std::vector<Summary> sweep_alpha(const ExperimentConfig& cfg, std::span<const double> alphas);
std::string sweep_csv(std::span<const Summary> rows);  // alpha,average_accuracy,final_acc,best_acc,...

// Full method against runs with the alignment term or the margin term
// switched off.
struct AblationRow {
    std::string variant;  // "w/o PA", "w/o LEMGP", "full"
    std::uint64_t seed = 0;
    Summary summary;
};

std::vector<AblationRow> ablation(const ExperimentConfig& cfg, std::span<const std::uint64_t> seeds);
std::string ablation_csv(std::span<const AblationRow> rows);  // variant,seed,final_acc,average_accuracy,...

double median(std::vector<double> values);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace mpfedkd::harness
