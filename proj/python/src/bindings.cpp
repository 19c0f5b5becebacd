// SPDX-License-Identifier: Apache-2.0
#include <pybind11/iostream.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <iostream>

#include "dynmoe/analysis/analysis.hpp"
#include "dynmoe/balancing/balancing.hpp"
#include "dynmoe/cli/commands.hpp"
#include "dynmoe/cli/run_config.hpp"
#include "dynmoe/distill/corpus.hpp"
#include "dynmoe/distill/train.hpp"
#include "dynmoe/errors.hpp"
#include "dynmoe/flops/flops.hpp"
#include "dynmoe/model/checkpoint.hpp"
#include "dynmoe/model/forward.hpp"

namespace py = pybind11;
using namespace dynmoe;
using nlohmann::json;

namespace {

json parse(const std::string& text) {
  auto j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("invalid JSON argument");
  return j;
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dynmoe");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  py::scoped_ostream_redirect out(std::cout, py::module_::import("sys").attr("stdout"));
  py::scoped_ostream_redirect err(std::cerr, py::module_::import("sys").attr("stderr"));
  return cli::cli_main(static_cast<int>(argv.size()), argv.data());
}

py::array_t<double> logits(const model::MoEModel& m, const model::TokenBatch& batch, std::optional<bool> mask) {
  if (batch.empty()) throw InputError("empty token batch");
  model::MoEModel view = m.clone();
  if (mask) view.set_extra_experts_masked(*mask);
  num::NoGradGuard guard;
  const auto out = model::lm_forward(view, batch);
  const auto& t = out.logits.value();
  py::array_t<double> arr({out.batch, out.seq_len, t.cols()});
  std::copy(t.data().begin(), t.data().end(), arr.mutable_data());
  return arr;
}

}  // namespace

PYBIND11_MODULE(_dynmoe, m) {
  m.doc() = "Bindings for the dynmoe core library; JSON-valued results are returned as strings.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<MissingArtifactError>(m, "MissingArtifactError", PyExc_FileNotFoundError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<StateError>(m, "StateError", PyExc_RuntimeError);

  m.def("cli_main", &run_cli, py::arg("args"), "Runs the command line with `args` (without the program name).");
  m.def(
      "resolve_config",
      [](const std::string& path, const std::vector<std::string>& overrides) {
        return cli::to_json(cli::load_run_config(path, overrides)).dump();
      },
      py::arg("path") = "", py::arg("overrides") = std::vector<std::string>{});
  m.def(
      "config_hash",
      [](const std::string& path, const std::vector<std::string>& overrides) {
        return cli::config_hash(cli::load_run_config(path, overrides));
      },
      py::arg("path") = "", py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "speedup_table",
      [](const std::string& config, const std::vector<double>& lengths, const std::vector<double>& r_ze) {
        const auto cfg = config.empty() ? flops::FlopsConfig::reference() : flops::flops_config_from_json(parse(config));
        std::vector<std::tuple<double, double, double, double>> rows;
        for (const auto& r : flops::speedup_table(cfg, lengths, r_ze)) rows.emplace_back(r.length, r.r_ze, r.prefill, r.decode);
        return rows;
      },
      py::arg("config"), py::arg("lengths"), py::arg("r_ze_values"));
  m.def("target_rze", &balancing::target_rze, py::arg("n_normal"), py::arg("n_zero"), py::arg("w"));
  m.def(
      "coupled_group_argmin",
      [](double alpha, double w, int n, int nz, int k, double step) {
        return balancing::coupled_group_argmin({alpha, w}, n, nz, k, step);
      },
      py::arg("alpha"), py::arg("w"), py::arg("n_normal"), py::arg("n_zero"), py::arg("k"), py::arg("step") = 1e-4);

  py::class_<model::MoEModel>(m, "Model")
      .def_static("load", &model::load_checkpoint, py::arg("path"))
      .def("save", [](const model::MoEModel& self, const std::string& path) { model::save_checkpoint(self, path); })
      .def_property_readonly("config", [](const model::MoEModel& self) { return model::to_json(self.config()).dump(); })
      .def_property_readonly("parameter_count", &model::MoEModel::parameter_count)
      .def("logits", &logits, py::arg("tokens"), py::arg("mask") = std::nullopt,
           "Next-token logits of shape (batch, seq_len, vocab).")
      .def(
          "evaluate",
          [](const model::MoEModel& self, const std::string& corpus_csv, std::optional<bool> mask) {
            return distill::evaluate(self, distill::read_corpus_csv(corpus_csv), mask).to_json().dump();
          },
          py::arg("corpus_csv"), py::arg("mask") = std::nullopt);

  m.def(
      "aggregate_records",
      [](const std::string& records_csv, const std::string& key) {
        std::vector<std::tuple<std::string, std::size_t, double, double, double>> out;
        for (const auto& g : analysis::aggregate_by(analysis::read_records_csv(records_csv), key)) {
          out.emplace_back(g.group, g.count, g.r_ze, g.entropy, g.delta_logp);
        }
        return out;
      },
      py::arg("records_csv"), py::arg("key"));
}
