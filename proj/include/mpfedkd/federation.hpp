#pragma once

// Federated training rounds: client selection, local updates with multi-
// prototype extraction, model and prototype aggregation, and the FedAvg /
// FedProx / FedProto baselines. Distributed units relay messages losslessly;
// they only account for traffic.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpfedkd/chac.hpp"
#include "mpfedkd/data.hpp"
#include "mpfedkd/losses.hpp"
#include "mpfedkd/model.hpp"

namespace mpfedkd::fl {

enum class Method { mp_fedkd, mp_fedkd_kmeans, fedavg, fedprox, fedproto };

Method parse_method(const std::string& name);
std::string to_string(Method m);

enum class PrototypeAggregation { normalized, literal };

PrototypeAggregation parse_aggregation(const std::string& name);
std::string to_string(PrototypeAggregation a);

struct FederationConfig {
    Method method = Method::mp_fedkd;
    losses::LossWeights weights;
    std::size_t prototypes_per_class = 3;
    std::size_t epochs = 5;
    std::size_t batch_size = 32;
    double learning_rate = 0.001;
    double fraction = 1.0;
    std::uint64_t seed = 0;
    PrototypeAggregation aggregation = PrototypeAggregation::normalized;
    double prox_rho = 0.01;
    double proto_weight = 1.0;
    // Cluster each batch instead of the full local set after training.
    bool per_batch_prototypes = false;
    std::size_t workers = 1;
    std::size_t distributed_units = 1;
    clustering::KMeansOptions kmeans;

    void validate() const;
    bool uses_prototypes() const { return method != Method::fedavg && method != Method::fedprox; }
    bool aggregates_models() const { return method != Method::fedproto; }
};

// ---------------------------------------------------------------- prototypes

struct ClassPrototypes {
    std::vector<std::vector<double>> centroids;
    std::size_t sample_count = 0;  // samples of this class on the client

    friend bool operator==(const ClassPrototypes&, const ClassPrototypes&) = default;
};

using LocalPrototypes = std::map<int, ClassPrototypes>;

struct PrototypeReport {
    std::size_t client = 0;
    LocalPrototypes prototypes;
};

// Per class c, over the clients that hold it:
//   normalized: sum_m (n_mc / n_c) * mean_i P_mc^i
//   literal:    sum_m 1 / (|M_c| * zeta_mc) * sum_i (n_mc / n_c) * P_mc^i
// Classes no report mentions keep their previous value.
losses::GlobalPrototypes aggregate_prototypes(std::span<const PrototypeReport> reports, PrototypeAggregation mode,
                                              const losses::GlobalPrototypes& previous);

// ---------------------------------------------------------------- models

struct WeightedModel {
    std::size_t client = 0;
    std::size_t samples = 0;
    std::reference_wrapper<const model::Backbone> model;
};

// Sample-weighted average. Participants are reduced in client-id order, so
// the result does not depend on the order they are passed in.
model::Backbone aggregate_models(std::span<const WeightedModel> updates);

// ---------------------------------------------------------------- selection / topology

std::vector<std::size_t> select_clients(std::size_t num_clients, double fraction, std::uint64_t seed,
                                        std::size_t round);

struct Topology {
    std::size_t units = 1;
    std::vector<std::size_t> unit_of;  // client -> distributed unit

    static Topology round_robin(std::size_t clients, std::size_t units);
    void validate() const;
};

// ---------------------------------------------------------------- client side

struct LossComponents {
    double ce = 0.0;
    double skd = 0.0;
    double pa = 0.0;
    double lemgp = 0.0;
    double total = 0.0;
};

// How often each loss evaluator ran during a client update.
struct EvaluatorTrace {
    std::size_t ce = 0;
    std::size_t skd = 0;
    std::size_t pa = 0;
    std::size_t lemgp = 0;
    std::size_t proximal = 0;
    std::size_t proto = 0;
};

struct ClientState {
    std::size_t id = 0;
    data::ClientShard shard;
    model::Backbone model;                  // personal model (FedProto) or last local model
    std::optional<model::Backbone> teacher;  // local model at the end of the last participation
    LocalPrototypes prototypes;
    std::size_t last_round = 0;
};

struct ClientUpdateResult {
    model::Backbone model;
    LocalPrototypes prototypes;
    LossComponents mean_losses;
    EvaluatorTrace trace;
    std::size_t samples = 0;
    std::size_t steps = 0;
};

ClientUpdateResult client_update(const ClientState& state, const data::Dataset& ds, const model::Backbone& global,
                                 const losses::GlobalPrototypes& protos, const FederationConfig& cfg,
                                 std::size_t round);

// Local objective of `candidate` averaged over the client's training batches,
// without updating anything.
LossComponents evaluate_local_loss(const ClientState& state, const data::Dataset& ds, const model::Backbone& candidate,
                                   const model::Backbone& global, const losses::GlobalPrototypes& protos,
                                   const FederationConfig& cfg, std::size_t round);

// Local prototypes from a model's embeddings of the client's training set.
LocalPrototypes extract_prototypes(const model::Backbone& m, const data::Dataset& ds, const data::ClientShard& shard,
                                   const FederationConfig& cfg, std::size_t round);

// ---------------------------------------------------------------- server side

struct ServerState {
    model::Backbone global;
    losses::GlobalPrototypes prototypes;
    std::size_t round = 0;
};

struct Evaluation {
    double accuracy = 0.0;
    double rmse = 0.0;
    double mae = 0.0;
    double macro_f1 = 0.0;
};

struct RoundRecord {
    std::size_t round = 0;
    std::vector<std::size_t> selected;
    LossComponents losses;
    Evaluation metrics;
    std::uint64_t bytes_up = 0;
    std::uint64_t bytes_down = 0;
    std::vector<std::uint64_t> unit_bytes_up;
    std::vector<std::uint64_t> unit_bytes_down;
    EvaluatorTrace trace;  // summed over participants
    double wall_seconds = 0.0;
};

Evaluation evaluate(const ServerState& server, std::span<const ClientState> clients, const data::Dataset& ds,
                    const FederationConfig& cfg);

RoundRecord run_round(ServerState& server, std::vector<ClientState>& clients, const data::Dataset& ds,
                      const Topology& topology, const FederationConfig& cfg);

// Initial server and client states for a partitioned dataset.
struct Federation {
    ServerState server;
    std::vector<ClientState> clients;
    Topology topology;
};

Federation make_federation(const data::Dataset& ds, const data::PartitionPlan& plan, const model::BackboneSpec& spec,
                           const FederationConfig& cfg);

}  // namespace mpfedkd::fl
