// Python bindings. Configs and reports cross the boundary as JSON text; the
// daac package wraps them as dicts.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "daac/errors.hpp"
#include "daac/evaluation.hpp"
#include "daac/losses.hpp"
#include "daac/pipeline.hpp"
#include "daac/runtime.hpp"

namespace py = pybind11;
using namespace daac;
using ad::Tensor;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  ad::Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from_data(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

std::vector<double> doubles(const Array& a) { return {a.data(), a.data() + a.size()}; }
std::vector<int> ints(const IntArray& a) { return {a.data(), a.data() + a.size()}; }
std::vector<std::int32_t> ids(const IntArray& a) { return {a.data(), a.data() + a.size()}; }

loss::BatchMeta meta_of(const IntArray& subjects, const IntArray& trials, double tau) {
  return {ids(subjects), ids(trials), tau};
}

pipe::RunConfig parse_config(const std::string& text) {
  return pipe::RunConfig::from_json(nlohmann::json::parse(text));
}

py::dict corpus_dict(const data::Corpus& c) {
  const std::size_t n = c.size();
  Array values({n, c.channels, c.length});
  IntArray labels(static_cast<py::ssize_t>(n)), subjects(static_cast<py::ssize_t>(n)),
      trials(static_cast<py::ssize_t>(n)), splits(static_cast<py::ssize_t>(n));
  double* v = values.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = c.samples[i];
    for (std::size_t k = 0; k < s.values.size(); ++k) *v++ = s.values[k];
    labels.mutable_data()[i] = s.label;
    subjects.mutable_data()[i] = s.subject_id;
    trials.mutable_data()[i] = s.trial_id;
    splits.mutable_data()[i] = static_cast<int>(c.splits[i]);
  }
  py::dict d;
  d["values"] = values;
  d["labels"] = labels;
  d["subject_ids"] = subjects;
  d["trial_ids"] = trials;
  d["splits"] = splits;
  return d;
}

}  // namespace

PYBIND11_MODULE(_daac, m) {
  m.doc() = "Discrepancy-aware contrastive learning core";
  tune_allocator();

  // Config, format and dimension errors all derive from ValidationError.
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<DegenerateBatchError>(m, "DegenerateBatchError", PyExc_RuntimeError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ArithmeticError);

  // metrics
  m.def("auroc", [](const Array& s, const IntArray& y) { return eval::auroc(doubles(s), ints(y)); });
  m.def("auprc", [](const Array& s, const IntArray& y) { return eval::auprc(doubles(s), ints(y)); });
  m.def("classification_metrics_json", [](const IntArray& y, const IntArray& p, const Array& s) {
    return eval::classification_metrics(ints(y), ints(p), doubles(s)).to_json().dump();
  });
  m.def(
      "mutual_information",
      [](const Array& f, const IntArray& y, std::size_t bins) { return eval::mutual_information(doubles(f), ints(y), bins); },
      py::arg("feature"), py::arg("labels"), py::arg("bins") = 16);

  // losses
  m.def(
      "subject_loss",
      [](const Array& h, const IntArray& s, const IntArray& t, double tau) {
        return loss::subject_loss(to_tensor(h), meta_of(s, t, tau)).value.item();
      },
      py::arg("h"), py::arg("subject_ids"), py::arg("trial_ids"), py::arg("tau") = 0.5);
  m.def(
      "trial_loss",
      [](const Array& h, const IntArray& s, const IntArray& t, double tau) {
        return loss::trial_loss(to_tensor(h), meta_of(s, t, tau)).value.item();
      },
      py::arg("h"), py::arg("subject_ids"), py::arg("trial_ids"), py::arg("tau") = 0.5);
  m.def("epoch_loss", [](const Array& a, const Array& b) { return loss::epoch_loss(to_tensor(a), to_tensor(b)).item(); });
  m.def("temporal_loss",
        [](const Array& a, const Array& b) { return loss::temporal_loss(to_tensor(a), to_tensor(b)).item(); });
  m.def("inter_view_loss",
        [](const Array& a, const Array& b) { return loss::inter_view_loss(to_tensor(a), to_tensor(b)).item(); });
  m.def(
      "intra_view_loss",
      [](const Array& a, const Array& b, const IntArray& s, const IntArray& t, double tau) {
        return loss::intra_view_loss(to_tensor(a), to_tensor(b), meta_of(s, t, tau)).value.item();
      },
      py::arg("g1"), py::arg("g2"), py::arg("subject_ids"), py::arg("trial_ids"), py::arg("tau") = 0.5);

  // data and pipeline
  m.def("default_config_json", [] { return pipe::default_config_json().dump(); });
  m.def("resolve_config_json", [](const std::string& text, const std::vector<std::string>& overrides) {
    auto full = pipe::RunConfig::from_json(nlohmann::json::parse(text)).to_json();
    return pipe::RunConfig::from_json(pipe::apply_overrides(full, overrides)).to_json().dump();
  });
  m.def("generate_synthetic", [](const std::string& text) {
    return corpus_dict(data::generate_synthetic(data::synth_config_from_json(nlohmann::json::parse(text))));
  });
  m.def("prepare_target", [](const std::string& config, std::uint64_t seed) {
    return corpus_dict(pipe::prepare_data(parse_config(config), seed).target);
  });
  m.def(
      "run_seed_json",
      [](const std::string& config, std::uint64_t seed, std::optional<std::string> out) {
        const auto c = parse_config(config);
        std::optional<std::filesystem::path> dir;
        if (out) dir = *out;
        pipe::SeedRun run;
        {
          py::gil_scoped_release release;
          run = pipe::run_seed(c, seed, dir);
        }
        return pipe::run_metrics_json(c, {run}).dump();
      },
      py::arg("config"), py::arg("seed"), py::arg("out") = std::nullopt);
  m.def(
      "run_ablation_csv",
      [](const std::string& config, const std::string& sweep, std::size_t jobs) {
        const auto c = parse_config(config);
        const auto s = pipe::parse_sweep(sweep);
        py::gil_scoped_release release;
        return pipe::ablation_csv(s, pipe::run_ablation(c, s, jobs));
      },
      py::arg("config"), py::arg("sweep"), py::arg("jobs") = 1);
  m.def("sweep_cell_names", [](const std::string& sweep) {
    std::vector<std::string> names;
    for (const auto& c : pipe::sweep_cells(pipe::parse_sweep(sweep))) names.push_back(c.name);
    return names;
  });
}
