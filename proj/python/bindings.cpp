#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mpfedkd/chac.hpp"
#include "mpfedkd/config.hpp"
#include "mpfedkd/data.hpp"
#include "mpfedkd/error.hpp"
#include "mpfedkd/experiment.hpp"
#include "mpfedkd/federation.hpp"
#include "mpfedkd/losses.hpp"
#include "mpfedkd/metrics.hpp"

namespace py = pybind11;
using namespace mpfedkd;

namespace {

ad::Tensor to_matrix(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ShapeError("expected at least one row");
    const auto cols = rows.front().size();
    std::vector<double> flat;
    flat.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        if (r.size() != cols) throw ShapeError("ragged rows");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return ad::Tensor({rows.size(), cols}, std::move(flat));
}

std::vector<std::vector<std::size_t>> memberships(const clustering::ClusteringResult& r) {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& c : r.clusters) out.push_back(c.members);
    return out;
}

py::array_t<double> to_array(const ad::Tensor& t) {
    py::array_t<double> a({t.rows(), t.cols()});
    std::copy(t.data().begin(), t.data().end(), a.mutable_data());
    return a;
}

// Evaluates a loss built on a fresh tape and returns its scalar value.
template <class F>
double scalar_loss(F&& build) {
    ad::Tape tape;
    return build(tape).value().item();
}

py::dict summary_dict(const harness::Summary& s) {
    py::dict d;
    d["method"] = s.method;
    d["seed"] = s.seed;
    d["alpha"] = s.alpha;
    d["rounds"] = s.rounds;
    d["final_acc"] = s.final_acc;
    d["average_accuracy"] = s.average_accuracy;
    d["best_acc"] = s.best_acc;
    d["best_round"] = s.best_round;
    d["final_rmse"] = s.final_rmse;
    d["final_mae"] = s.final_mae;
    d["final_macro_f1"] = s.final_macro_f1;
    return d;
}

model::BackboneSpec make_spec(const std::string& kind, std::size_t input_dim, std::size_t hidden_dim,
                              std::size_t embedding_dim, std::size_t num_classes) {
    model::BackboneSpec spec;
    spec.kind = model::parse_backbone_kind(kind);
    spec.input_dim = input_dim;
    spec.hidden_dim = hidden_dim;
    spec.embedding_dim = embedding_dim;
    spec.num_classes = num_classes;
    spec.validate();
    return spec;
}

harness::ExperimentConfig config_from_text(const std::string& text) {
    auto cfg = harness::apply_ini(harness::parse_ini(text));
    cfg.validate();
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Core of the multi-prototype federated distillation simulator";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_IOError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    // clustering
    m.def("delta_ssq",
          [](std::size_t na, std::vector<double> a, std::size_t nb, std::vector<double> b) {
              return clustering::delta_ssq(na, a, nb, b);
          },
          py::arg("size_a"), py::arg("mean_a"), py::arg("size_b"), py::arg("mean_b"));
    m.def("chac", [](const std::vector<std::vector<double>>& pts, std::size_t target) {
              return memberships(clustering::chac(to_matrix(pts), target));
          },
          py::arg("points"), py::arg("target"), "Ward clustering; returns member lists ordered by smallest member");
    m.def("chac_centroids", [](const std::vector<std::vector<double>>& pts, std::size_t target) {
              return clustering::centroids(clustering::chac(to_matrix(pts), target));
          },
          py::arg("points"), py::arg("target"));
    m.def("kmeans", [](const std::vector<std::vector<double>>& pts, std::size_t k, std::uint64_t seed) {
              return memberships(clustering::kmeans(to_matrix(pts), k, seed));
          },
          py::arg("points"), py::arg("k"), py::arg("seed"));

    // data
    m.def("synth_blobs",
          [](std::size_t classes, std::size_t per_class, std::size_t dim, double spread, std::uint64_t seed) {
              auto ds = data::synth_blobs(classes, per_class, dim, spread, seed);
              return py::make_tuple(to_array(ds.features), ds.labels);
          },
          py::arg("classes"), py::arg("per_class"), py::arg("dim"), py::arg("spread"), py::arg("seed"));
    m.def("partition_json", [](const std::string& config_text) {
              auto cfg = config_from_text(config_text);
              return harness::make_partition(harness::load_dataset(cfg), cfg).to_json();
          },
          py::arg("config_text"));

    // metrics
    m.def("accuracy", [](std::vector<int> p, std::vector<int> y) { return metrics::accuracy(p, y); }, py::arg("preds"),
          py::arg("labels"));
    m.def("rmse_mae", [](std::vector<int> p, std::vector<int> y) {
              auto e = metrics::rmse_mae(p, y);
              return py::make_tuple(e.rmse, e.mae);
          },
          py::arg("preds"), py::arg("labels"));
    m.def("macro_f1",
          [](std::vector<int> p, std::vector<int> y, std::size_t c) { return metrics::macro_f1(p, y, c); },
          py::arg("preds"), py::arg("labels"), py::arg("num_classes"));
    m.def("average_accuracy", [](std::vector<double> a) { return metrics::average_accuracy(a); },
          py::arg("accuracies"));

    // losses
    m.def("skd_loss",
          [](const std::vector<std::vector<double>>& teacher, const std::vector<std::vector<double>>& student,
             double tau) {
              return scalar_loss([&](ad::Tape& t) {
                  return losses::skd_loss(t.constant(to_matrix(teacher)), t.constant(to_matrix(student)), tau);
              });
          },
          py::arg("teacher_logits"), py::arg("student_logits"), py::arg("tau") = 0.1);
    m.def("ce_loss", [](const std::vector<std::vector<double>>& logits, std::vector<int> labels) {
              return scalar_loss([&](ad::Tape& t) { return losses::ce_loss(t.constant(to_matrix(logits)), labels); });
          },
          py::arg("logits"), py::arg("labels"));
    m.def("lemgp_repulsive",
          [](const std::vector<std::vector<double>>& emb, const std::map<int, std::vector<double>>& protos,
             double scale) {
              return scalar_loss([&](ad::Tape& t) {
                  losses::PrototypeVars vars;
                  std::vector<int> classes;
                  for (const auto& [c, p] : protos) {
                      vars.emplace(c, t.constant(ad::Tensor::vector(p)));
                      classes.push_back(c);
                  }
                  return losses::lemgp_repulsive(t.constant(to_matrix(emb)), vars, classes, scale);
              });
          },
          py::arg("embeddings"), py::arg("prototypes"), py::arg("scale") = 0.5);

    // models as flat parameter vectors
    m.def("init_parameters",
          [](const std::string& kind, std::size_t input_dim, std::size_t hidden_dim, std::size_t embedding_dim,
             std::size_t num_classes, std::uint64_t seed) {
              auto spec = make_spec(kind, input_dim, hidden_dim, embedding_dim, num_classes);
              return model::Backbone::initialize(spec, seed).snapshot(0).values;
          },
          py::arg("kind"), py::arg("input_dim"), py::arg("hidden_dim"), py::arg("embedding_dim"),
          py::arg("num_classes"), py::arg("seed"));
    m.def("aggregate_parameters",
          [](const std::string& kind, std::size_t input_dim, std::size_t hidden_dim, std::size_t embedding_dim,
             std::size_t num_classes, const std::vector<std::vector<double>>& params,
             const std::vector<std::size_t>& samples) {
              if (params.size() != samples.size()) throw ShapeError("one sample count per model required");
              auto spec = make_spec(kind, input_dim, hidden_dim, embedding_dim, num_classes);
              std::vector<model::Backbone> models;
              for (const auto& p : params) {
                  model::ModelSnapshot snap{p, spec.parameter_shapes(), 0};
                  models.push_back(model::Backbone::restore(spec, snap));
              }
              std::vector<fl::WeightedModel> w;
              for (std::size_t i = 0; i < models.size(); ++i) w.push_back({i, samples[i], std::cref(models[i])});
              return fl::aggregate_models(w).snapshot(0).values;
          },
          py::arg("kind"), py::arg("input_dim"), py::arg("hidden_dim"), py::arg("embedding_dim"),
          py::arg("num_classes"), py::arg("params"), py::arg("samples"));
    m.def("aggregate_prototypes",
          [](const std::vector<std::map<int, std::pair<std::vector<std::vector<double>>, std::size_t>>>& reports,
             const std::string& mode) {
              std::vector<fl::PrototypeReport> rs;
              for (std::size_t i = 0; i < reports.size(); ++i) {
                  fl::PrototypeReport r{i, {}};
                  for (const auto& [c, entry] : reports[i]) r.prototypes[c] = {entry.first, entry.second};
                  rs.push_back(std::move(r));
              }
              auto g = fl::aggregate_prototypes(rs, fl::parse_aggregation(mode), {});
              std::map<int, std::vector<double>> out;
              for (int c : g.available()) {
                  auto v = g.get(c);
                  out[c] = {v.begin(), v.end()};
              }
              return out;
          },
          py::arg("reports"), py::arg("mode") = "normalized",
          "reports: per client {class: (centroids, sample_count)}");

    // harness
    m.def("resolve_config", [](const std::string& text) { return config_from_text(text).to_ini(); },
          py::arg("config_text"));
    m.def("run_experiment",
          [](const std::string& text, std::optional<std::filesystem::path> out_dir) {
              auto cfg = config_from_text(text);
              harness::RunResult r;
              {
                  py::gil_scoped_release release;
                  r = harness::run_experiment(cfg, out_dir);
              }
              py::list rounds;
              for (const auto& rec : r.rounds) {
                  py::dict d;
                  d["round"] = rec.round;
                  d["selected"] = rec.selected;
                  d["ce"] = rec.losses.ce;
                  d["skd"] = rec.losses.skd;
                  d["pa"] = rec.losses.pa;
                  d["lemgp"] = rec.losses.lemgp;
                  d["loss"] = rec.losses.total;
                  d["acc"] = rec.metrics.accuracy;
                  d["rmse"] = rec.metrics.rmse;
                  d["mae"] = rec.metrics.mae;
                  d["macro_f1"] = rec.metrics.macro_f1;
                  rounds.append(d);
              }
              py::dict out;
              out["summary"] = summary_dict(r.summary);
              out["rounds"] = rounds;
              out["rounds_csv"] = harness::rounds_csv(r.rounds);
              return out;
          },
          py::arg("config_text"), py::arg("out_dir") = py::none());
}
