// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Python bindings. Configs cross the boundary as JSON text (the same schema
// as run specs); tensors as float64 NumPy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "vitlab/experiments.hpp"
#include "vitlab/model.hpp"
#include "vitlab/normalization.hpp"
#include "vitlab/train.hpp"

namespace py = pybind11;
using namespace vitlab;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<double>(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

template <typename T>
Array to_array(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

ModelConfig model_from(const std::string& text) {
  return model_config_from_json(nlohmann::json::parse(text));
}

py::dict params_to_dict(const ParamTree<double>& tree) {
  py::dict d;
  for (const auto& [path, t] : tree) d[py::str(path)] = to_array(t);
  return d;
}

ParamTree<double> params_from_dict(const py::dict& d) {
  ParamTree<double> tree;
  for (const auto& [k, v] : d) {
    Tensor<double> t = to_tensor(v.cast<Array>());
    t.set_grad_tracked(true);
    tree.add(k.cast<std::string>(), std::move(t));
  }
  return tree;
}

// Runs a norm on the last axis of x through the tape-free helpers.
Array norm(NormKind kind, const Array& x, std::optional<Array> gamma, std::optional<Array> beta,
           double eps) {
  const Tensor<double> xt = to_tensor(x);
  const std::size_t d = xt.shape().empty() ? 1 : xt.shape().back();
  const Tensor<double> g = gamma ? to_tensor(*gamma) : Tensor<double>({d}, 1.0);
  const Tensor<double> b = beta ? to_tensor(*beta) : Tensor<double>({d}, 0.0);
  switch (kind) {
    case NormKind::layer_norm: return to_array(layer_norm(xt, NormParams<double>{g, b, eps}));
    case NormKind::rms_norm: return to_array(rms_norm(xt, g, eps));
    case NormKind::affine_only: return to_array(affine_only(xt, NormParams<double>{g, b, eps}));
    case NormKind::normalize_only: return to_array(normalize_only(xt, eps));
  }
  throw std::logic_error("unreachable");
}

py::dict run_outcome(const RunOutcome& r) {
  py::dict d;
  d["name"] = r.name;
  d["status"] = r.status;
  d["accuracy"] = r.accuracy ? py::cast(*r.accuracy) : py::none();
  d["metrics_path"] = r.metrics_path.string();
  d["checkpoint_path"] = r.checkpoint_path.string();
  return d;
}

RunSpec spec_from(const std::string& text) { return run_spec_from_json(nlohmann::json::parse(text)); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "vitlab native core";

  // Translators run newest first, so the base class goes in before its subclasses.
  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());

  m.def("patchify", [](const Array& images, std::size_t patch) {
    return to_array(patchify(to_tensor(images), patch));
  }, py::arg("images"), py::arg("patch"));

  m.def("layer_norm", [](const Array& x, std::optional<Array> g, std::optional<Array> b, double eps) {
    return norm(NormKind::layer_norm, x, g, b, eps);
  }, py::arg("x"), py::arg("gamma") = py::none(), py::arg("beta") = py::none(), py::arg("eps") = kNormEps);
  m.def("rms_norm", [](const Array& x, std::optional<Array> g, double eps) {
    return norm(NormKind::rms_norm, x, g, std::nullopt, eps);
  }, py::arg("x"), py::arg("gamma") = py::none(), py::arg("eps") = kNormEps);
  m.def("affine_only", [](const Array& x, std::optional<Array> g, std::optional<Array> b) {
    return norm(NormKind::affine_only, x, g, b, kNormEps);
  }, py::arg("x"), py::arg("gamma") = py::none(), py::arg("beta") = py::none());
  m.def("normalize_only", [](const Array& x, double eps) {
    return norm(NormKind::normalize_only, x, std::nullopt, std::nullopt, eps);
  }, py::arg("x"), py::arg("eps") = kNormEps);

  m.def("init_params", [](const std::string& model, std::uint64_t seed, const std::string& loss) {
    return params_to_dict(init_params<double>(model_from(model), seed, parse_loss(loss)));
  }, py::arg("model_json"), py::arg("seed") = 0, py::arg("loss") = "sigmoid_xent");

  m.def("vit_logits", [](const std::string& model, const py::dict& params, const Array& images) {
    return to_array(vit_logits(model_from(model), params_from_dict(params), to_tensor(images)));
  }, py::arg("model_json"), py::arg("params"), py::arg("images"));

  m.def("stem_forward", [](const std::string& model, const py::dict& params, const Array& patches) {
    const ModelConfig cfg = model_from(model);
    const ParamTree<double> tree = params_from_dict(params);
    Graph<double> g;
    BoundParams<double> p(g, tree);
    return to_array(stem_forward(g.constant(to_tensor(patches)), cfg, p).tokens.value());
  }, py::arg("model_json"), py::arg("params"), py::arg("patches"));

  m.def("micro_model_json", [] { return to_json(micro_model_config()).dump(); });

  m.def("gradient_check_model", [](const std::string& model, std::size_t batch, std::uint64_t seed,
                                   double tolerance) {
    GradCheckOptions opts;
    opts.tolerance = tolerance;
    const auto report = gradient_check_model(model_from(model), batch, seed, opts);
    py::list rows;
    for (const auto& e : report.entries) {
      py::dict row;
      row["param"] = e.name;
      row["elements"] = e.elements;
      row["max_rel_error"] = e.max_rel_error;
      row["max_abs_error"] = e.max_abs_error;
      row["passed"] = e.passed;
      rows.append(row);
    }
    return rows;
  }, py::arg("model_json"), py::arg("batch") = 2, py::arg("seed") = 0, py::arg("tolerance") = 1e-4);

  m.def("cosine_schedule", [](std::size_t step, const std::string& train) {
    return cosine_schedule(step, train_config_from_json(nlohmann::json::parse(train)));
  }, py::arg("step"), py::arg("train_json"));

  m.def("clip_global_norm", [](std::vector<Array> grads, double clip) {
    std::vector<Tensor<double>> ts;
    for (const auto& g : grads) ts.push_back(to_tensor(g));
    const double before = clip_global_norm(ts, clip);
    std::vector<Array> out;
    for (const auto& t : ts) out.push_back(to_array(t));
    return py::make_tuple(out, before);
  }, py::arg("grads"), py::arg("clip"));

  m.def("placement_grid", [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (auto [a, b] : placement_grid()) out.emplace_back(to_string(a), to_string(b));
    return out;
  });

  // Experiment commands; they release the GIL while training.
  m.def("train", [](const std::string& spec) {
    RunOutcome r;
    {
      py::gil_scoped_release release;
      r = cmd_train(spec_from(spec));
    }
    return run_outcome(r);
  }, py::arg("spec_json"));
  m.def("sweep_placements", [](const std::string& spec) {
    py::gil_scoped_release release;
    return cmd_sweep_placements(spec_from(spec)).csv_path.string();
  }, py::arg("spec_json"));
  m.def("ablate_stem", [](const std::string& spec) {
    py::gil_scoped_release release;
    return cmd_ablate_stem(spec_from(spec)).csv_path.string();
  }, py::arg("spec_json"));
  m.def("export_scales", [](const std::string& checkpoint, const std::string& out) {
    const auto r = cmd_export_scales(checkpoint, out);
    std::vector<std::string> images;
    for (const auto& p : r.images) images.push_back(p.string());
    return py::make_tuple(images, r.csv_path.string());
  }, py::arg("checkpoint"), py::arg("out_dir"));
}
