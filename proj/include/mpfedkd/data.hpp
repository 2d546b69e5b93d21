#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpfedkd/tensor.hpp"

namespace mpfedkd::data {

struct Dataset {
    std::string name;
    ad::Tensor features;       // [N x input_dim]
    std::vector<int> labels;   // N entries in [0, num_classes)
    std::vector<int> domains;  // N entries; the per-sample domain tag
    std::size_t num_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t input_dim() const { return features.cols(); }

    void validate() const;
    ad::Tensor rows(std::span<const std::size_t> indices) const;
    std::vector<int> labels_of(std::span<const std::size_t> indices) const;
    std::vector<std::size_t> distinct_domains() const;
};

// Reads an IDX image file (magic 0x00000803) and its IDX label file
// (magic 0x00000801). Pixels are scaled to [0, 1]. Throws DataError.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t limit = 0, int domain = 0);

struct IdxImages {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> pixels;
};
IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);

// Gaussian blobs, one per class, with centers drawn on a sphere of the given
// radius. Among a fixed number of seeded candidate center sets the one with
// the largest minimum pairwise distance is kept.
Dataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double spread, std::uint64_t seed,
                    double radius = 1.0, int domain = 0);
std::vector<std::vector<double>> blob_centers(std::size_t classes, std::size_t dim, std::uint64_t seed,
                                              double radius = 1.0);

// Concatenates two datasets that share a label space, keeping their domain tags.
Dataset concat_domains(const Dataset& a, const Dataset& b, std::string name = {});

enum class Heterogeneity { same_domain, distinct_domain };

Heterogeneity parse_heterogeneity(const std::string& name);
std::string to_string(Heterogeneity h);

struct ClientShard {
    std::size_t client = 0;
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    std::vector<std::size_t> class_histogram;  // over train indices
    std::optional<int> domain;                 // set for distinct-domain plans

    std::vector<int> present_classes() const;
};

struct PartitionOptions {
    std::size_t clients = 1;
    double alpha = 0.5;
    double test_fraction = 0.2;
    Heterogeneity heterogeneity = Heterogeneity::same_domain;
    std::uint64_t seed = 0;
    std::size_t max_retries = 100;
};

struct PartitionPlan {
    std::vector<ClientShard> shards;
    double alpha = 0.0;
    Heterogeneity heterogeneity = Heterogeneity::same_domain;
    std::uint64_t seed = 0;
    std::size_t attempts = 1;

    std::vector<std::size_t> union_test() const;
    std::string to_json() const;
};

// Per-class Dirichlet split. For distinct-domain plans the client set is first
// halved at random and each half draws only from one domain's samples.
PartitionPlan partition_dirichlet(const Dataset& ds, const PartitionOptions& options);

}  // namespace mpfedkd::data
