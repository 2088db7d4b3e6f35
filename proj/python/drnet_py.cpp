/*
 * Copyright DRNet Contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <sstream>

#include "drnet/checkpoint.hpp"
#include "drnet/error.hpp"
#include "drnet/eval.hpp"
#include "drnet/flops.hpp"
#include "drnet/gradcheck.hpp"
#include "drnet/gumbel.hpp"
#include "drnet/objective.hpp"
#include "drnet/train.hpp"

namespace py = pybind11;

namespace {

using drnet::Tensor;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  drnet::Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict cost_report_dict(const drnet::ArchSpec& spec, const drnet::CostReport& r) {
  py::list rows;
  for (const auto& row : r.rows) {
    rows.append(py::dict(py::arg("name") = row.name, py::arg("kind") = row.kind, py::arg("macs") = row.macs,
                         py::arg("output") = drnet::to_string(row.output)));
  }
  return py::dict(py::arg("arch") = spec.name, py::arg("resolution") = r.resolution,
                  py::arg("total_macs") = r.total_macs, py::arg("mflops") = r.mflops(), py::arg("rows") = rows);
}

py::dict eval_dict(const drnet::EvalReport& r) {
  return py::dict(py::arg("samples") = r.samples, py::arg("top1") = r.top1,
                  py::arg("avg_classifier_mflops") = r.avg_classifier_mflops,
                  py::arg("predictor_mflops") = r.predictor_mflops, py::arg("avg_total_mflops") = r.avg_total_mflops,
                  py::arg("histogram") = r.histogram, py::arg("per_class_accuracy") = r.per_class_accuracy);
}

drnet::Dataset load_val(const std::filesystem::path& root, const std::string& format, std::size_t limit) {
  return drnet::load_dataset({drnet::parse_dataset_format(format), root, drnet::Split::Val, limit});
}

drnet::ImageBatch to_batch(const Array& images) {
  if (images.ndim() != 4 || images.shape(2) != images.shape(3)) {
    throw drnet::DimensionError("images must be a float array [N, C, S, S]");
  }
  drnet::ImageBatch b{to_tensor(images), std::vector<int>(static_cast<std::size_t>(images.shape(0)), 0)};
  return b;
}

/// Python-facing handle around a loaded model.
class PyModel {
 public:
  explicit PyModel(drnet::LoadedCheckpoint ck) : ck_(std::make_shared<drnet::LoadedCheckpoint>(std::move(ck))) {}

  static PyModel load(const std::filesystem::path& path) { return PyModel(drnet::load_checkpoint(path)); }

  std::vector<int> resolutions() const { return ck_->model.resolution_set.resolutions; }
  std::vector<double> costs() const { return ck_->model.resolution_set.costs; }
  std::string stage() const { return ck_->info.stage; }
  int epoch() const { return ck_->info.epoch; }

  py::tuple infer(const Array& images) {
    const drnet::InferenceResult r = drnet::infer_dynamic(ck_->model, to_batch(images));
    return py::make_tuple(r.predicted_class, r.chosen_index, r.classifier_mflops);
  }

  Array probabilities(const Array& images) {
    const drnet::ImageBatch raw = to_batch(images);
    const auto view = drnet::prepare_view(ck_->model, raw, ck_->model.resolution_set.predictor_input);
    drnet::NoGradGuard guard;
    return to_array(drnet::predictor_forward(ck_->model, view, false).value());
  }

  py::dict evaluate(const std::filesystem::path& root, std::optional<int> static_index, std::size_t limit,
                    std::size_t batch, const std::string& format) {
    const drnet::Dataset data = load_val(root, format, limit);
    return eval_dict(static_index ? drnet::evaluate_static(ck_->model, data, *static_index, batch)
                                  : drnet::evaluate(ck_->model, data, batch));
  }

  py::dict baseline(const std::filesystem::path& root, int trials, std::uint64_t seed, std::size_t limit,
                    std::size_t batch, const std::string& format) {
    const drnet::Dataset data = load_val(root, format, limit);
    const drnet::EvalReport dyn = drnet::evaluate(ck_->model, data, batch);
    const auto b = drnet::random_resolution_baseline(ck_->model, data, dyn.histogram, trials, seed, batch);
    return py::dict(py::arg("dynamic_top1") = dyn.top1, py::arg("trial_top1") = b.trial_top1,
                    py::arg("mean_top1") = b.mean_top1, py::arg("std_top1") = b.std_top1,
                    py::arg("avg_classifier_mflops") = b.avg_classifier_mflops, py::arg("histogram") = b.histogram);
  }

  void save(const std::filesystem::path& path) { drnet::save_checkpoint(path, ck_->model, ck_->info); }

 private:
  std::shared_ptr<drnet::LoadedCheckpoint> ck_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "DRNet dynamic-resolution network engine";

  // Translators run newest first, so the base class is registered before its subclasses.
  const auto& base = py::register_exception<drnet::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<drnet::ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<drnet::LoadError>(m, "LoadError", base.ptr());

  m.def(
      "arch_text",
      [](const std::string& ref, int outputs) { return drnet::serialize_arch(drnet::resolve_arch(ref, outputs)); },
      py::arg("ref"), py::arg("outputs") = 0, "Text form of a preset (\"preset:NAME\") or arch file.");
  m.def(
      "model_flops",
      [](const std::string& ref, int resolution, int outputs) {
        const auto spec = drnet::resolve_arch(ref, outputs);
        return cost_report_dict(spec, drnet::model_flops(spec, resolution));
      },
      py::arg("ref"), py::arg("resolution"), py::arg("outputs") = 0);
  m.def(
      "cost_table",
      [](const std::string& ref, const std::vector<int>& resolutions, int outputs) {
        return drnet::resolution_cost_table(drnet::resolve_arch(ref, outputs), resolutions);
      },
      py::arg("ref"), py::arg("resolutions"), py::arg("outputs") = 0, "Classifier MFLOPs per resolution.");
  m.def(
      "average_inference_flops",
      [](const std::vector<std::uint64_t>& counts, const std::vector<double>& costs, double predictor) {
        return drnet::average_inference_flops(counts, costs, predictor);
      },
      py::arg("counts"), py::arg("costs"), py::arg("predictor_cost") = 0.0);

  m.def(
      "sample_gumbel",
      [](std::size_t n, std::uint64_t seed) {
        drnet::Rng rng = drnet::make_rng(seed);
        return to_array(drnet::sample_gumbel({n}, rng));
      },
      py::arg("n"), py::arg("seed"));
  m.def(
      "straight_through_select",
      [](const Array& p, double tau, std::optional<std::uint64_t> seed) {
        drnet::GumbelConfig cfg;
        cfg.tau = tau;
        cfg.sample_noise = seed.has_value();
        drnet::Rng rng = drnet::make_rng(seed.value_or(0));
        const auto sel = drnet::straight_through_select(drnet::Variable(to_tensor(p)), cfg, seed ? &rng : nullptr);
        return py::make_tuple(to_array(sel.soft.value()), to_array(sel.hard.value()), sel.chosen_index);
      },
      py::arg("p"), py::arg("tau") = 1.0, py::arg("seed") = py::none(),
      "Returns (soft, hard, chosen). Without a seed the selection is the noise-free argmax.");

  m.def(
      "expected_flops",
      [](const Array& hard, const std::vector<double>& costs) {
        return drnet::expected_flops(drnet::Variable(to_tensor(hard)), costs).item();
      },
      py::arg("hard"), py::arg("costs"));
  m.def(
      "flops_regularizer",
      [](double expected, const std::vector<double>& costs, double alpha) {
        const auto cfg = drnet::LossConfig::from_costs(costs, 0.0, alpha);
        return drnet::flops_regularizer(drnet::Variable(Tensor({1}, {expected})), cfg).item();
      },
      py::arg("expected"), py::arg("costs"), py::arg("alpha"));

  m.def("gradcheck", [](double h, double tol) {
    py::list out;
    for (const auto& r : drnet::run_gradcheck_suite(h, tol)) out.append(py::make_tuple(r.name, r.max_rel_error, r.passed));
    return out;
  }, py::arg("h") = 1e-5, py::arg("tolerance") = 1e-4);

  m.def(
      "run_experiment",
      [](const std::string& config_json, bool resume, std::optional<int> stop_after, bool verbose) {
        const auto cfg = drnet::parse_experiment_config(nlohmann::json::parse(config_json, nullptr, true, true));
        drnet::RunResult r;
        {
          py::gil_scoped_release release;
          r = drnet::run_experiment(cfg, {resume, stop_after, verbose});
        }
        return py::make_tuple(r.final_checkpoint, r.finished, r.state.epoch);
      },
      py::arg("config_json"), py::arg("resume") = false, py::arg("stop_after") = py::none(),
      py::arg("verbose") = false, "Runs a training stage from a JSON config string.");

  py::class_<PyModel>(m, "Model")
      .def_static("load", &PyModel::load, py::arg("path"))
      .def_property_readonly("resolutions", &PyModel::resolutions)
      .def_property_readonly("costs", &PyModel::costs)
      .def_property_readonly("stage", &PyModel::stage)
      .def_property_readonly("epoch", &PyModel::epoch)
      .def("infer", &PyModel::infer, py::arg("images"),
           "images: float [N,3,S,S] in [0,1]. Returns (classes, chosen indices, classifier MFLOPs).")
      .def("probabilities", &PyModel::probabilities, py::arg("images"))
      .def("evaluate", &PyModel::evaluate, py::arg("data_root"), py::arg("static_index") = py::none(),
           py::arg("limit") = 0, py::arg("batch_size") = 256, py::arg("format") = "cifar10")
      .def("baseline", &PyModel::baseline, py::arg("data_root"), py::arg("trials") = 3, py::arg("seed") = 1,
           py::arg("limit") = 0, py::arg("batch_size") = 256, py::arg("format") = "cifar10")
      .def("save", &PyModel::save, py::arg("path"));
}
