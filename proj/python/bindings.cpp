#include "dccmvc/cli.hpp"
#include "dccmvc/data.hpp"
#include "dccmvc/losses.hpp"
#include "dccmvc/metrics.hpp"
#include "dccmvc/model.hpp"
#include "dccmvc/trainer.hpp"

#include <nlohmann/json.hpp>
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <sstream>

namespace py = pybind11;
using namespace dccmvc;

namespace {

MultiViewDataset make_dataset(const std::vector<Matrix>& views, const std::optional<std::vector<int>>& labels) {
  MultiViewDataset d;
  d.views = views;
  if (labels) {
    d.labels = *labels;
    d.num_classes = labels->empty() ? 0 : *std::max_element(labels->begin(), labels->end()) + 1;
  }
  d.validate();
  return d;
}

py::tuple dataset_tuple(const MultiViewDataset& d) {
  py::object labels = d.labels ? py::cast(*d.labels) : py::none();
  return py::make_tuple(d.views, labels);
}

TrainConfig config_from_json(const std::string& text) {
  return cli::parse_train_config(nlohmann::json::parse(text));
}

py::dict report_dict(const LossReport& r) {
  py::dict d;
  d["rec"] = r.rec;
  d["within"] = r.within;
  d["cross"] = r.cross;
  d["shared_inference"] = r.shared_inference;
  d["contrastive"] = r.contrastive;
  d["total"] = r.total;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Disentangled dual-consistency multi-view clustering";

  py::register_exception<cli::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalFailure>(m, "NumericalFailure", PyExc_ArithmeticError);

  m.def(
      "synth",
      [](int n, int clusters, int views, int d_shared, int d_private, int view_dim, const std::string& mixing,
         double noise_sigma, std::uint64_t seed) {
        SynthSpec s;
        s.n = n;
        s.clusters = clusters;
        s.views = views;
        s.d_shared = d_shared;
        s.d_private = d_private;
        s.view_dim = view_dim;
        if (mixing != "tanh" && mixing != "linear") throw std::invalid_argument("mixing must be linear or tanh");
        s.mixing = mixing == "tanh" ? Mixing::kTanh : Mixing::kLinear;
        s.noise_sigma = noise_sigma;
        s.seed = seed;
        return dataset_tuple(synth_generate(s));
      },
      py::arg("n") = 600, py::arg("clusters") = 3, py::arg("views") = 2, py::arg("d_shared") = 3,
      py::arg("d_private") = 4, py::arg("view_dim") = 20, py::arg("mixing") = "tanh", py::arg("noise_sigma") = 0.1,
      py::arg("seed") = 0, "Synthetic multi-view data. Returns (views, labels).");

  m.def(
      "load_dataset",
      [](const std::filesystem::path& path, const std::string& format) {
        return dataset_tuple(load_dataset(path, parse_data_format(format)));
      },
      py::arg("path"), py::arg("format") = "dccb");
  m.def(
      "save_dataset",
      [](const std::vector<Matrix>& views, const std::optional<std::vector<int>>& labels,
         const std::filesystem::path& path, const std::string& format) {
        const MultiViewDataset d = make_dataset(views, labels);
        if (parse_data_format(format) == DataFormat::kCsv) {
          save_csv(d, path);
        } else {
          save_dccb(d, path);
        }
      },
      py::arg("views"), py::arg("labels"), py::arg("path"), py::arg("format") = "dccb");
  m.def(
      "normalize",
      [](const std::vector<Matrix>& views, const std::string& mode) {
        return normalize(make_dataset(views, std::nullopt), parse_normalization(mode)).views;
      },
      py::arg("views"), py::arg("mode") = "minmax");

  py::class_<DccmvcModel>(m, "Model")
      .def_property_readonly("num_views", &DccmvcModel::num_views)
      .def_property_readonly("clusters", [](const DccmvcModel& model) { return model.config().clusters; })
      .def_property_readonly("private_dim", [](const DccmvcModel& model) { return model.config().private_dim; })
      .def_property_readonly("tau", [](const DccmvcModel& model) { return model.config().tau; })
      .def("save", [](const DccmvcModel& model, const std::filesystem::path& p) { save_checkpoint(model, p); })
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); })
      .def("parameters",
           [](DccmvcModel& model) {
             py::dict out;
             for (ParameterRef& p : model.parameters()) out[py::str(p.name)] = p.tensor->value();
             return out;
           })
      .def(
          "representation",
          [](DccmvcModel& model, const std::vector<Matrix>& views) {
            return extract_representation(model, make_dataset(views, std::nullopt));
          },
          py::arg("views"))
      .def(
          "fused_probabilities",
          [](DccmvcModel& model, const std::vector<Matrix>& views) {
            return fused_shared_probabilities(model, make_dataset(views, std::nullopt));
          },
          py::arg("views"))
      .def(
          "assign",
          [](DccmvcModel& model, const std::vector<Matrix>& views, const std::string& mode, std::uint64_t seed) {
            return assign_clusters(model, make_dataset(views, std::nullopt), parse_assign_mode(mode), seed).labels;
          },
          py::arg("views"), py::arg("mode") = "kmeans", py::arg("seed") = 0)
      .def(
          "_losses",
          [](DccmvcModel& model, const std::vector<Matrix>& views, const std::string& config_json, int epoch,
             int batch) {
            const TrainConfig c = config_from_json(config_json);
            Tape tape;
            std::vector<Var> vs;
            for (const Matrix& v : views) vs.push_back(tape.constant(v));
            const NoiseBundle noise = batch_noise(c.seed, epoch, batch, views.at(0).rows(), model);
            return report_dict(loss_total(model, tape, vs, c.weights, noise).report);
          },
          py::arg("views"), py::arg("config_json") = "{}", py::arg("epoch") = 0, py::arg("batch") = 0)
      .def("__eq__", [](const DccmvcModel& a, const DccmvcModel& b) { return a == b; });

  m.def(
      "_train",
      [](const std::vector<Matrix>& views, const std::optional<std::vector<int>>& labels,
         const std::string& config_json, const std::function<void(py::dict)>& on_epoch) {
        const MultiViewDataset data = make_dataset(views, labels);
        const TrainConfig config = config_from_json(config_json);
        py::list trace;
        TrainResult result = train(data, config, [&](const TraceEntry& e) {
          py::dict d = report_dict(e.report);
          d["epoch"] = e.epoch;
          d["stage"] = std::string(stage_name(e.stage));
          d["stage_epoch"] = e.stage_epoch;
          trace.append(d);
          if (on_epoch) on_epoch(d);
        });
        return py::make_tuple(std::move(result.model), trace);
      },
      py::arg("views"), py::arg("labels"), py::arg("config_json"), py::arg("on_epoch") = nullptr);

  m.def(
      "kmeans",
      [](const Matrix& points, int k, std::uint64_t seed) {
        KMeansResult r = kmeans(points, k, seed);
        return py::make_tuple(r.partition.labels, r.centroids, r.inertia);
      },
      py::arg("points"), py::arg("k"), py::arg("seed") = 0, "Returns (labels, centroids, inertia).");

  auto partitions = [](const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size()) throw std::invalid_argument("pred and truth differ in length");
    return std::pair{Partition::from_labels(pred), Partition::from_labels(truth)};
  };
  m.def(
      "accuracy",
      [partitions](const std::vector<int>& pred, const std::vector<int>& truth) {
        auto [p, t] = partitions(pred, truth);
        return accuracy(p, t);
      },
      py::arg("pred"), py::arg("truth"));
  m.def(
      "nmi",
      [partitions](const std::vector<int>& pred, const std::vector<int>& truth, const std::string& norm) {
        auto [p, t] = partitions(pred, truth);
        if (norm != "geometric" && norm != "arithmetic") throw std::invalid_argument("unknown nmi normalization");
        return nmi(p, t, norm == "geometric" ? NmiNormalization::kGeometric : NmiNormalization::kArithmetic);
      },
      py::arg("pred"), py::arg("truth"), py::arg("norm") = "geometric");
  m.def(
      "purity",
      [partitions](const std::vector<int>& pred, const std::vector<int>& truth) {
        auto [p, t] = partitions(pred, truth);
        return purity(p, t);
      },
      py::arg("pred"), py::arg("truth"));

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a command-line invocation in-process. Returns (exit code, stdout, stderr).");
}
