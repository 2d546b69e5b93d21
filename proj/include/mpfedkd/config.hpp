#pragma once

// Experiment configuration: a flat "key = value" file split into [sections].
// Unknown sections and keys are rejected.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "mpfedkd/data.hpp"
#include "mpfedkd/federation.hpp"
#include "mpfedkd/model.hpp"

namespace mpfedkd::harness {

// section -> key -> raw value. Lines starting with '#' or ';' are comments.
using IniFile = std::map<std::string, std::map<std::string, std::string>>;

IniFile parse_ini(std::string_view text);

struct DataSpec {
    std::string source = "blobs";  // blobs | idx
    // blobs
    std::size_t classes = 3;
    std::size_t per_class = 200;
    std::size_t dim = 2;
    double spread = 0.5;
    double radius = 1.0;
    std::size_t domains = 1;  // 2 adds a second blob domain with its own centers
    // idx
    std::string images;
    std::string labels;
    std::string images_b;  // optional second domain
    std::string labels_b;
    std::size_t limit = 0;

    double test_fraction = 0.2;
};

struct PartitionSpec {
    std::size_t clients = 4;
    double alpha = 0.3;
    data::Heterogeneity heterogeneity = data::Heterogeneity::same_domain;
};

struct ExperimentConfig {
    DataSpec data;
    PartitionSpec partition;
    model::BackboneSpec backbone;  // input_dim and num_classes come from the dataset
    fl::FederationConfig federation;
    std::size_t rounds = 50;
    std::string out = "runs/default";
    bool checkpoints = false;

    void validate() const;
    // Resolved config in the same format parse_ini reads.
    std::string to_ini() const;
};

// Applies every key of `ini` on top of `base`. Throws ConfigError on unknown
// sections or keys and on malformed values.
ExperimentConfig apply_ini(const IniFile& ini, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace mpfedkd::harness
