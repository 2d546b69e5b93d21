#include "mpfedkd/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "mpfedkd/error.hpp"
#include "mpfedkd/metrics.hpp"
#include "mpfedkd/rng.hpp"

namespace mpfedkd::fl {

using ad::Tensor;
using ad::Var;

Method parse_method(const std::string& name) {
    if (name == "mp-fedkd") return Method::mp_fedkd;
    if (name == "mp-fedkd-kmeans") return Method::mp_fedkd_kmeans;
    if (name == "fedavg") return Method::fedavg;
    if (name == "fedprox") return Method::fedprox;
    if (name == "fedproto") return Method::fedproto;
    throw ConfigError("unknown method '" + name + "' (expected mp-fedkd, mp-fedkd-kmeans, fedavg, fedprox or fedproto)");
}

std::string to_string(Method m) {
    switch (m) {
        case Method::mp_fedkd: return "mp-fedkd";
        case Method::mp_fedkd_kmeans: return "mp-fedkd-kmeans";
        case Method::fedavg: return "fedavg";
        case Method::fedprox: return "fedprox";
        case Method::fedproto: return "fedproto";
    }
    return "?";
}

PrototypeAggregation parse_aggregation(const std::string& name) {
    if (name == "normalized") return PrototypeAggregation::normalized;
    if (name == "literal") return PrototypeAggregation::literal;
    throw ConfigError("unknown prototype aggregation '" + name + "' (expected normalized or literal)");
}

std::string to_string(PrototypeAggregation a) { return a == PrototypeAggregation::normalized ? "normalized" : "literal"; }

void FederationConfig::validate() const {
    weights.validate();
    if (prototypes_per_class < 1) throw ConfigError("prototypes per class must be at least 1");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("participation fraction must lie in (0, 1]");
    if (!(prox_rho >= 0.0)) throw ConfigError("proximal coefficient must be non-negative");
    if (!(proto_weight >= 0.0)) throw ConfigError("prototype weight must be non-negative");
    if (workers < 1) throw ConfigError("worker count must be at least 1");
    if (distributed_units < 1) throw ConfigError("there must be at least one distributed unit");
}

// ---------------------------------------------------------------- aggregation

losses::GlobalPrototypes aggregate_prototypes(std::span<const PrototypeReport> reports, PrototypeAggregation mode,
                                              const losses::GlobalPrototypes& previous) {
    std::vector<const PrototypeReport*> order;
    for (const auto& r : reports) order.push_back(&r);
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->client < b->client; });

    std::size_t num_classes = previous.num_classes();
    std::size_t dim = previous.dim();
    for (const auto* r : order)
        for (const auto& [c, cp] : r->prototypes) {
            num_classes = std::max(num_classes, static_cast<std::size_t>(c) + 1);
            if (dim == 0 && !cp.centroids.empty()) dim = cp.centroids.front().size();
        }

    losses::GlobalPrototypes out(num_classes, dim);
    for (int c : previous.available()) {
        auto v = previous.get(c);
        out.set(c, {v.begin(), v.end()});
    }

    for (std::size_t c = 0; c < num_classes; ++c) {
        std::vector<const ClassPrototypes*> holders;
        std::size_t total = 0;
        for (const auto* r : order) {
            auto it = r->prototypes.find(static_cast<int>(c));
            if (it == r->prototypes.end() || it->second.centroids.empty()) continue;
            holders.push_back(&it->second);
            total += it->second.sample_count;
        }
        if (holders.empty()) continue;
        if (total == 0) throw Error("prototype reports for class " + std::to_string(c) + " carry no samples");

        std::vector<double> acc(dim, 0.0);
        const double clients_c = static_cast<double>(holders.size());
        for (const auto* h : holders) {
            const double w = static_cast<double>(h->sample_count) / static_cast<double>(total);
            const double zeta = static_cast<double>(h->centroids.size());
            const double factor = mode == PrototypeAggregation::normalized ? w / zeta : w / (clients_c * zeta);
            for (const auto& p : h->centroids) {
                if (p.size() != dim) throw ShapeError("prototype width mismatch during aggregation");
                for (std::size_t q = 0; q < dim; ++q) acc[q] += factor * p[q];
            }
        }
        out.set(static_cast<int>(c), std::move(acc));
    }
    return out;
}

model::Backbone aggregate_models(std::span<const WeightedModel> updates) {
    if (updates.empty()) throw Error("model aggregation needs at least one participant");
    std::vector<const WeightedModel*> order;
    for (const auto& u : updates) order.push_back(&u);
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->client < b->client; });

    std::size_t total = 0;
    for (const auto* u : order) total += u->samples;
    if (total == 0) throw Error("model aggregation needs a positive sample count");

    const model::Backbone& ref = order.front()->model.get();
    for (const auto* u : order) {
        auto p = u->model.get().parameters();
        if (p.size() != ref.parameters().size()) throw ShapeError("aggregated models differ in parameter count");
        for (std::size_t i = 0; i < p.size(); ++i)
            if (p[i].shape() != ref.parameters()[i].shape()) throw ShapeError("aggregated models differ in shape");
    }

    // ref + sum_m w_m (p_m - ref) equals sum_m w_m p_m and returns ref
    // bit-for-bit when all participants agree.
    model::Backbone out = ref;
    auto dst = out.parameters();
    for (const auto* u : order) {
        const double w = static_cast<double>(u->samples) / static_cast<double>(total);
        auto src = u->model.get().parameters();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            auto d = dst[i].data();
            auto s = src[i].data();
            auto r = ref.parameters()[i].data();
            for (std::size_t j = 0; j < d.size(); ++j) d[j] += w * (s[j] - r[j]);
        }
    }
    return out;
}

// ---------------------------------------------------------------- selection / topology

std::vector<std::size_t> select_clients(std::size_t num_clients, double fraction, std::uint64_t seed,
                                        std::size_t round) {
    if (num_clients == 0) throw Error("cannot select from an empty client set");
    if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("participation fraction must lie in (0, 1]");
    const auto k = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(num_clients))), 1, num_clients);
    std::vector<std::size_t> ids(num_clients);
    std::iota(ids.begin(), ids.end(), 0);
    auto rng = make_rng(seed, {stream::selection, round});
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, num_clients - 1);
        std::swap(ids[i], ids[pick(rng)]);
    }
    ids.resize(k);
    std::sort(ids.begin(), ids.end());
    return ids;
}

Topology Topology::round_robin(std::size_t clients, std::size_t units) {
    Topology t;
    t.units = units;
    t.unit_of.resize(clients);
    for (std::size_t m = 0; m < clients; ++m) t.unit_of[m] = m % units;
    t.validate();
    return t;
}

void Topology::validate() const {
    if (units == 0) throw ConfigError("topology needs at least one distributed unit");
    for (auto u : unit_of)
        if (u >= units) throw ConfigError("client assigned to a non-existent distributed unit");
}

// ---------------------------------------------------------------- client side

namespace {

constexpr std::size_t kEvalChunk = 512;

struct BatchObjective {
    Var loss;
    LossComponents values;
};

struct LocalContext {
    const ClientState& state;
    const model::Backbone& global;
    const FederationConfig& cfg;
    std::size_t round;
    std::vector<int> client_classes;
};

bool distills(const LocalContext& ctx) {
    return (ctx.cfg.method == Method::mp_fedkd || ctx.cfg.method == Method::mp_fedkd_kmeans) && ctx.round > 1 &&
           ctx.state.teacher.has_value();
}

BatchObjective batch_objective(ad::Tape& tape, const model::ForwardPass& pass, const Tensor& batch,
                               std::span<const int> labels, const losses::PrototypeVars& protos,
                               const LocalContext& ctx, EvaluatorTrace& trace) {
    const auto& cfg = ctx.cfg;
    BatchObjective out;
    auto ce = losses::ce_loss(pass.logits, labels);
    ++trace.ce;
    out.values.ce = ce.value().item();
    out.loss = ce;

    switch (cfg.method) {
        case Method::fedavg:
            break;
        case Method::fedprox: {
            auto ref = ctx.global.parameters();
            std::vector<Var> terms;
            for (std::size_t i = 0; i < pass.params.size(); ++i)
                terms.push_back(ad::sum(ad::square(ad::sub(pass.params[i], tape.constant(ref[i])))));
            auto prox = ad::scale(ad::sum(ad::stack(terms)), 0.5 * cfg.prox_rho);
            ++trace.proximal;
            out.loss = ad::add(ce, prox);
            break;
        }
        case Method::fedproto: {
            if (ctx.round <= 1 || protos.empty()) break;
            auto reg = losses::proto_regularizer(pass.embeddings, labels, protos);
            ++trace.proto;
            if (!reg.no_overlap) out.loss = ad::add(ce, ad::scale(reg.value, cfg.proto_weight));
            break;
        }
        case Method::mp_fedkd:
        case Method::mp_fedkd_kmeans: {
            if (!distills(ctx)) break;
            const auto& w = cfg.weights;
            auto teacher = ctx.state.teacher->forward(tape, batch, false);
            auto skd = losses::skd_loss(teacher.logits, pass.logits, w.tau);
            ++trace.skd;
            auto pa = losses::pa_loss(teacher.embeddings, labels, protos);
            ++trace.pa;
            auto att = losses::lemgp_attractive(pass.embeddings, labels, protos, w.lemgp_scale);
            std::vector<int> rep_classes;
            for (int c : ctx.client_classes)
                if (protos.contains(c)) rep_classes.push_back(c);
            Var lemgp = tape.constant(Tensor::scalar(0.0));
            if (!rep_classes.empty()) {
                auto rep = losses::lemgp_repulsive(pass.embeddings, protos, rep_classes, w.lemgp_scale);
                lemgp = losses::lemgp_loss(att.value, rep, w.lemgp_balance);
            }
            ++trace.lemgp;
            out.values.skd = skd.value().item();
            out.values.pa = pa.value.value().item();
            out.values.lemgp = lemgp.value().item();
            out.loss = losses::local_loss(ce, skd, pa.value, lemgp, w, ctx.round);
            break;
        }
    }
    out.values.total = out.loss.value().item();
    return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order, std::size_t batch_size) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < order.size(); s += batch_size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + batch_size)));
    return out;
}

void accumulate(LossComponents& acc, const LossComponents& v) {
    acc.ce += v.ce;
    acc.skd += v.skd;
    acc.pa += v.pa;
    acc.lemgp += v.lemgp;
    acc.total += v.total;
}

LossComponents averaged(LossComponents acc, std::size_t n) {
    if (n == 0) return acc;
    const double d = static_cast<double>(n);
    acc.ce /= d;
    acc.skd /= d;
    acc.pa /= d;
    acc.lemgp /= d;
    acc.total /= d;
    return acc;
}

ClassPrototypes cluster_class(const Tensor& points, std::size_t count, const FederationConfig& cfg, std::size_t client,
                              std::size_t round, int cls) {
    clustering::ClusteringResult r;
    switch (cfg.method) {
        case Method::fedproto: {
            std::vector<std::size_t> all(points.rows());
            std::iota(all.begin(), all.end(), 0);
            r.clusters.push_back(clustering::make_cluster(points, std::move(all)));
            break;
        }
        case Method::mp_fedkd_kmeans:
            r = clustering::kmeans(points, cfg.prototypes_per_class,
                                   derive_seed(cfg.seed, {stream::kmeans, client, round, static_cast<std::uint64_t>(cls)}),
                                   cfg.kmeans);
            break;
        default:
            r = clustering::chac(points, cfg.prototypes_per_class);
            break;
    }
    return {clustering::centroids(r), count};
}

LocalPrototypes prototypes_from_embeddings(const Tensor& embeddings, std::span<const int> labels,
                                           const std::vector<std::size_t>& histogram, const FederationConfig& cfg,
                                           std::size_t client, std::size_t round) {
    LocalPrototypes out;
    auto groups = losses::group_by_class(labels);
    for (std::size_t k = 0; k < groups.classes.size(); ++k) {
        const int c = groups.classes[k];
        const auto& rows = groups.rows[k];
        std::vector<double> pts;
        pts.reserve(rows.size() * embeddings.cols());
        for (auto r : rows) {
            auto e = embeddings.row(r);
            pts.insert(pts.end(), e.begin(), e.end());
        }
        Tensor points({rows.size(), embeddings.cols()}, std::move(pts));
        const auto count = static_cast<std::size_t>(c) < histogram.size() ? histogram[static_cast<std::size_t>(c)] : rows.size();
        out.emplace(c, cluster_class(points, count, cfg, client, round, c));
    }
    return out;
}

}  // namespace

LocalPrototypes extract_prototypes(const model::Backbone& m, const data::Dataset& ds, const data::ClientShard& shard,
                                   const FederationConfig& cfg, std::size_t round) {
    if (shard.train.empty()) return {};
    std::vector<double> emb;
    std::size_t width = 0;
    for (std::size_t s = 0; s < shard.train.size(); s += kEvalChunk) {
        std::span<const std::size_t> idx(shard.train.data() + s, std::min(kEvalChunk, shard.train.size() - s));
        auto out = m.evaluate(ds.rows(idx));
        width = out.embeddings.cols();
        emb.insert(emb.end(), out.embeddings.data().begin(), out.embeddings.data().end());
    }
    Tensor embeddings({shard.train.size(), width}, std::move(emb));
    auto labels = ds.labels_of(shard.train);
    return prototypes_from_embeddings(embeddings, labels, shard.class_histogram, cfg, shard.client, round);
}

ClientUpdateResult client_update(const ClientState& state, const data::Dataset& ds, const model::Backbone& global,
                                 const losses::GlobalPrototypes& protos, const FederationConfig& cfg,
                                 std::size_t round) {
    if (round < 1) throw Error("rounds are numbered from 1");
    if (state.shard.train.empty()) throw Error("client " + std::to_string(state.id) + " has an empty training shard");

    ClientUpdateResult result;
    result.model = cfg.method == Method::fedproto ? state.model : global;
    result.samples = state.shard.train.size();
    LocalContext ctx{state, global, cfg, round, state.shard.present_classes()};

    auto rng = make_rng(cfg.seed, {stream::batches, state.id, round});
    std::vector<std::size_t> order = state.shard.train;
    LossComponents sums;
    std::optional<LocalPrototypes> batch_protos;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (const auto& idx : make_batches(order, cfg.batch_size)) {
            const Tensor batch = ds.rows(idx);
            const auto labels = ds.labels_of(idx);
            ad::Tape tape;
            auto pass = result.model.forward(tape, batch, true);
            auto pvars = losses::bind_prototypes(tape, protos);
            auto objective = batch_objective(tape, pass, batch, labels, pvars, ctx, result.trace);
            auto grads = tape.backward(objective.loss);
            if (cfg.per_batch_prototypes && cfg.uses_prototypes())
                batch_protos = prototypes_from_embeddings(pass.embeddings.value(), labels, state.shard.class_histogram,
                                                          cfg, state.id, round);
            model::sgd_step(result.model, model::parameter_gradients(pass, grads), cfg.learning_rate);
            accumulate(sums, objective.values);
            ++result.steps;
        }
    }

    result.mean_losses = averaged(sums, result.steps);
    if (cfg.uses_prototypes())
        result.prototypes = batch_protos ? std::move(*batch_protos)
                                         : extract_prototypes(result.model, ds, state.shard, cfg, round);
    return result;
}

LossComponents evaluate_local_loss(const ClientState& state, const data::Dataset& ds, const model::Backbone& candidate,
                                   const model::Backbone& global, const losses::GlobalPrototypes& protos,
                                   const FederationConfig& cfg, std::size_t round) {
    LocalContext ctx{state, global, cfg, round, state.shard.present_classes()};
    EvaluatorTrace trace;
    LossComponents sums;
    std::size_t n = 0;
    for (const auto& idx : make_batches(state.shard.train, cfg.batch_size)) {
        const Tensor batch = ds.rows(idx);
        const auto labels = ds.labels_of(idx);
        ad::Tape tape;
        auto pass = candidate.forward(tape, batch, true);
        auto pvars = losses::bind_prototypes(tape, protos);
        accumulate(sums, batch_objective(tape, pass, batch, labels, pvars, ctx, trace).values);
        ++n;
    }
    return averaged(sums, n);
}

// ---------------------------------------------------------------- server side

namespace {

std::vector<int> predict(const model::Backbone& m, const data::Dataset& ds, std::span<const std::size_t> indices) {
    std::vector<int> preds;
    preds.reserve(indices.size());
    for (std::size_t s = 0; s < indices.size(); s += kEvalChunk) {
        auto idx = indices.subspan(s, std::min(kEvalChunk, indices.size() - s));
        auto out = m.evaluate(ds.rows(idx));
        auto p = metrics::argmax_rows(out.logits.data(), out.logits.cols());
        preds.insert(preds.end(), p.begin(), p.end());
    }
    return preds;
}

std::uint64_t prototype_bytes(const LocalPrototypes& p) {
    std::uint64_t b = 0;
    for (const auto& [c, cp] : p) {
        b += sizeof(std::uint64_t);
        for (const auto& v : cp.centroids) b += v.size() * sizeof(double);
    }
    return b;
}

}  // namespace

Evaluation evaluate(const ServerState& server, std::span<const ClientState> clients, const data::Dataset& ds,
                    const FederationConfig& cfg) {
    std::vector<int> preds, labels;
    Evaluation e;
    if (cfg.method == Method::fedproto) {
        double acc_sum = 0.0;
        std::size_t counted = 0;
        for (const auto& c : clients) {
            if (c.shard.test.empty()) continue;
            auto p = predict(c.model, ds, c.shard.test);
            auto y = ds.labels_of(c.shard.test);
            acc_sum += metrics::accuracy(p, y);
            ++counted;
            preds.insert(preds.end(), p.begin(), p.end());
            labels.insert(labels.end(), y.begin(), y.end());
        }
        if (counted == 0) throw Error("no client holds test samples");
        e.accuracy = acc_sum / static_cast<double>(counted);
    } else {
        std::vector<std::size_t> test;
        for (const auto& c : clients) test.insert(test.end(), c.shard.test.begin(), c.shard.test.end());
        std::sort(test.begin(), test.end());
        if (test.empty()) throw Error("no client holds test samples");
        preds = predict(server.global, ds, test);
        labels = ds.labels_of(test);
        e.accuracy = metrics::accuracy(preds, labels);
    }
    auto err = metrics::rmse_mae(preds, labels);
    e.rmse = err.rmse;
    e.mae = err.mae;
    e.macro_f1 = metrics::macro_f1(preds, labels, ds.num_classes);
    return e;
}

RoundRecord run_round(ServerState& server, std::vector<ClientState>& clients, const data::Dataset& ds,
                      const Topology& topology, const FederationConfig& cfg) {
    const auto started = std::chrono::steady_clock::now();
    if (topology.unit_of.size() != clients.size()) throw ConfigError("topology does not cover every client");

    RoundRecord rec;
    rec.round = server.round + 1;
    rec.selected = select_clients(clients.size(), cfg.fraction, cfg.seed, rec.round);
    rec.unit_bytes_up.assign(topology.units, 0);
    rec.unit_bytes_down.assign(topology.units, 0);

    // Downlink through each client's distributed unit.
    std::uint64_t proto_down = 0;
    if (cfg.uses_prototypes())
        proto_down = server.prototypes.available().size() * (server.prototypes.dim() + 1) * sizeof(double);
    const std::uint64_t model_bytes = cfg.aggregates_models() ? server.global.parameter_count() * sizeof(double) : 0;
    for (auto m : rec.selected) rec.unit_bytes_down[topology.unit_of[m]] += model_bytes + proto_down;

    const auto n = rec.selected.size();
    std::vector<std::optional<ClientUpdateResult>> results(n);
    std::vector<std::exception_ptr> errors(n);
    auto work = [&](std::size_t k) {
        try {
            results[k] = client_update(clients[rec.selected[k]], ds, server.global, server.prototypes, cfg, rec.round);
        } catch (...) {
            errors[k] = std::current_exception();
        }
    };
    const auto workers = std::min(cfg.workers, n);
    if (workers <= 1) {
        for (std::size_t k = 0; k < n; ++k) work(k);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t k = next++; k < n; k = next++) work(k);
            });
    }
    for (std::size_t k = 0; k < n; ++k) {
        if (!errors[k]) continue;
        try {
            std::rethrow_exception(errors[k]);
        } catch (const std::exception& e) {
            throw Error("client " + std::to_string(rec.selected[k]) + ": " + e.what());
        }
    }

    // Uplink, state updates and aggregation in client-id order.
    std::vector<WeightedModel> models;
    std::vector<PrototypeReport> reports;
    const bool keeps_teacher = cfg.method == Method::mp_fedkd || cfg.method == Method::mp_fedkd_kmeans;
    for (std::size_t k = 0; k < n; ++k) {
        auto& r = *results[k];
        auto& state = clients[rec.selected[k]];
        rec.unit_bytes_up[topology.unit_of[state.id]] +=
            (cfg.aggregates_models() ? r.model.parameter_count() * sizeof(double) : 0) + prototype_bytes(r.prototypes);
        state.model = r.model;
        if (keeps_teacher) state.teacher = r.model;
        state.prototypes = r.prototypes;
        state.last_round = rec.round;

        accumulate(rec.losses, r.mean_losses);
        rec.trace.ce += r.trace.ce;
        rec.trace.skd += r.trace.skd;
        rec.trace.pa += r.trace.pa;
        rec.trace.lemgp += r.trace.lemgp;
        rec.trace.proximal += r.trace.proximal;
        rec.trace.proto += r.trace.proto;

        models.push_back({state.id, r.samples, std::cref(state.model)});
        if (cfg.uses_prototypes()) reports.push_back({state.id, r.prototypes});
    }
    rec.losses = averaged(rec.losses, n);

    if (cfg.aggregates_models()) server.global = aggregate_models(models);
    if (cfg.uses_prototypes()) server.prototypes = aggregate_prototypes(reports, cfg.aggregation, server.prototypes);
    server.round = rec.round;

    rec.metrics = evaluate(server, clients, ds, cfg);
    for (auto b : rec.unit_bytes_up) rec.bytes_up += b;
    for (auto b : rec.unit_bytes_down) rec.bytes_down += b;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return rec;
}

Federation make_federation(const data::Dataset& ds, const data::PartitionPlan& plan, const model::BackboneSpec& spec,
                           const FederationConfig& cfg) {
    cfg.validate();
    if (spec.input_dim != ds.input_dim()) throw ConfigError("backbone input width does not match the dataset");
    if (spec.num_classes != ds.num_classes) throw ConfigError("backbone class count does not match the dataset");
    Federation f;
    f.server.global = model::Backbone::initialize(spec, cfg.seed);
    f.server.prototypes = losses::GlobalPrototypes(ds.num_classes, spec.embedding_dim);
    for (const auto& shard : plan.shards) {
        ClientState c;
        c.id = shard.client;
        c.shard = shard;
        c.model = f.server.global;
        f.clients.push_back(std::move(c));
    }
    f.topology = Topology::round_robin(f.clients.size(), cfg.distributed_units);
    return f;
}

}  // namespace mpfedkd::fl
