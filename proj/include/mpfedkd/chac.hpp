#pragma once

// Conditional Ward agglomerative clustering of per-class embeddings, and a
// seeded Lloyd K-Means alternative. Both emit cluster centroids that serve as
// a client's local prototypes for one class.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mpfedkd/tensor.hpp"

namespace mpfedkd::clustering {

struct Cluster {
    std::vector<std::size_t> members;  // ascending row indices into the input
    std::vector<double> mean;

    std::size_t size() const noexcept { return members.size(); }
};

struct Merge {
    std::size_t a = 0;  // smallest member index of each merged cluster, a < b
    std::size_t b = 0;
    double delta_ssq = 0.0;
};

struct ClusteringResult {
    std::vector<Cluster> clusters;  // ordered by smallest member index
    std::vector<Merge> merges;

    std::size_t count() const noexcept { return clusters.size(); }
};

// Increase in within-cluster sum of squares when a and b are merged:
// v_a v_b / (v_a + v_b) * |mean_a - mean_b|^2.
double delta_ssq(const Cluster& a, const Cluster& b);
double delta_ssq(std::size_t size_a, std::span<const double> mean_a, std::size_t size_b,
                 std::span<const double> mean_b);

Cluster make_cluster(const ad::Tensor& points, std::vector<std::size_t> members);

// Ward agglomeration of the rows of `points` ([n x Q]) down to `target`
// clusters. When n < target nothing is merged and every row is a cluster.
// Ties on the smallest increase go to the pair whose (a, b) is
// lexicographically smallest.
ClusteringResult chac(const ad::Tensor& points, std::size_t target);

std::vector<std::vector<double>> centroids(const ClusteringResult& result);

struct KMeansOptions {
    std::size_t max_iters = 100;
    std::size_t restarts = 8;
};

// Lloyd iterations from k distinct points drawn uniformly; the lowest-inertia
// restart wins. With fewer than k rows every row is its own cluster.
ClusteringResult kmeans(const ad::Tensor& points, std::size_t k, std::uint64_t seed, const KMeansOptions& options = {});

double inertia(const ad::Tensor& points, const ClusteringResult& result);

// "step,a,b,delta_ssq" rows, one per merge.
std::string merge_log_csv(const ClusteringResult& result);

enum class Clusterer { chac, kmeans };

Clusterer parse_clusterer(const std::string& name);
std::string to_string(Clusterer c);

}  // namespace mpfedkd::clustering
