#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "asag/cli.hpp"
#include "asag/diagnostics.hpp"
#include "asag/eval.hpp"

namespace py = pybind11;
using namespace asag;

namespace {

std::vector<eval::ScoredExample> zip_scores(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");
  std::vector<eval::ScoredExample> out;
  out.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out.push_back({scores[i], labels[i]});
  return out;
}

py::dict metrics_dict(const eval::Metrics& m) {
  py::dict d;
  d["n"] = m.n;
  d["accuracy"] = m.accuracy;
  d["auc"] = m.auc;
  d["loss"] = m.loss;
  d["positive_rate"] = m.positive_rate;
  return d;
}

data::GeneratorConfig generator_config(std::size_t pairs, double noise, const py::kwargs& extra) {
  data::GeneratorConfig g;
  g.pairs = pairs;
  g.noise = noise;
  for (auto [key, value] : extra) {
    const auto k = key.cast<std::string>();
    if (k == "references") g.references = value.cast<std::size_t>();
    else if (k == "concepts") g.concepts = value.cast<std::size_t>();
    else if (k == "synonyms") g.synonyms = value.cast<std::size_t>();
    else if (k == "filler_words") g.filler_words = value.cast<std::size_t>();
    else if (k == "keywords") g.keywords = value.cast<std::size_t>();
    else if (k == "reference_length") g.reference_length = value.cast<std::size_t>();
    else if (k == "student_filler_min") g.student_filler_min = value.cast<std::size_t>();
    else if (k == "student_filler_max") g.student_filler_max = value.cast<std::size_t>();
    else if (k == "reference_filler_share") g.reference_filler_share = value.cast<double>();
    else throw ConfigError("unknown generator option '" + k + "'");
  }
  g.validate();
  return g;
}

// Values may be given as Python bools, numbers or strings.
std::string config_value(const py::handle& value) {
  if (py::isinstance<py::bool_>(value)) return value.cast<bool>() ? "true" : "false";
  return py::str(value).cast<std::string>();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Short-answer grading with multiway attention";

  auto base = py::register_exception<Error>(m, "AsagError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<MaskError>(m, "MaskError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());

  py::class_<data::AnswerPair>(m, "AnswerPair")
      .def(py::init<std::string, std::string, std::string, int>(), py::arg("id"), py::arg("student_text"),
           py::arg("reference_text"), py::arg("label"))
      .def_readwrite("id", &data::AnswerPair::id)
      .def_readwrite("student_text", &data::AnswerPair::student_text)
      .def_readwrite("reference_text", &data::AnswerPair::reference_text)
      .def_readwrite("label", &data::AnswerPair::label)
      .def("__eq__", [](const data::AnswerPair& a, const data::AnswerPair& b) { return a == b; })
      .def("__repr__", [](const data::AnswerPair& p) {
        return "AnswerPair(id=" + py::repr(py::str(p.id)).cast<std::string>() +
               ", label=" + std::to_string(p.label) + ")";
      });

  py::class_<data::Vocabulary>(m, "Vocabulary")
      .def(py::init<>())
      .def("__len__", &data::Vocabulary::size)
      .def("__contains__", &data::Vocabulary::contains)
      .def("id", &data::Vocabulary::id)
      .def("token", &data::Vocabulary::token)
      .def_property_readonly("tokens", &data::Vocabulary::tokens)
      .def("save", &data::Vocabulary::save)
      .def_static("load", &data::Vocabulary::load);

  m.def("tokenize", &data::tokenize, py::arg("text"));
  m.def(
      "build_vocab",
      [](const std::vector<data::AnswerPair>& pairs, std::size_t min_count) { return data::build_vocab(pairs, min_count); },
      py::arg("pairs"), py::arg("min_count") = 1);
  m.def("read_dataset", &data::read_dataset, py::arg("path"));
  m.def(
      "write_dataset", [](const std::vector<data::AnswerPair>& pairs, const std::string& path) { data::write_dataset(pairs, path); },
      py::arg("pairs"), py::arg("path"));
  m.def(
      "generate_dataset",
      [](std::size_t pairs, std::uint64_t seed, double noise, const py::kwargs& extra) {
        auto g = generator_config(pairs, noise, extra);
        Rng rng = training::set_global_seed(seed).stream("generator");
        return data::generate_synthetic_dataset(g, rng);
      },
      py::arg("pairs") = 1000, py::arg("seed") = 1, py::arg("noise") = 0.0,
      "Synthetic answer pairs; extra keyword arguments set generator options.");
  m.def(
      "generate_splits",
      [](const std::string& out_dir, std::size_t pairs, std::uint64_t seed, double noise, double train_fraction,
         double validation_fraction, const py::kwargs& extra) {
        auto sizes = cli::generate_splits(generator_config(pairs, noise, extra), {train_fraction, validation_fraction},
                                          seed, out_dir);
        return py::make_tuple(sizes.train, sizes.validation, sizes.test);
      },
      py::arg("out_dir"), py::arg("pairs") = 1000, py::arg("seed") = 1, py::arg("noise") = 0.0,
      py::arg("train_fraction") = 0.7, py::arg("validation_fraction") = 0.1,
      "Writes train.tsv, validation.tsv and test.tsv; returns the split sizes.");

  m.def(
      "accuracy",
      [](const std::vector<double>& scores, const std::vector<int>& labels, double threshold) {
        return eval::accuracy(zip_scores(scores, labels), threshold);
      },
      py::arg("scores"), py::arg("labels"), py::arg("threshold") = 0.5);
  m.def(
      "auc", [](const std::vector<double>& scores, const std::vector<int>& labels) { return eval::auc(zip_scores(scores, labels)); },
      py::arg("scores"), py::arg("labels"));

  py::class_<eval::LrBaselineModel>(m, "LrBaseline")
      .def_readonly("weights", &eval::LrBaselineModel::weights)
      .def_readonly("iterations", &eval::LrBaselineModel::iterations)
      .def_readonly("gradient_norm", &eval::LrBaselineModel::gradient_norm)
      .def(
          "predict",
          [](const eval::LrBaselineModel& model, const data::AnswerPair& pair, const data::Vocabulary& vocab) {
            return eval::lr_baseline_predict(model, pair, vocab);
          },
          py::arg("pair"), py::arg("vocab"))
      .def(
          "scores",
          [](const eval::LrBaselineModel& model, const std::vector<data::AnswerPair>& pairs, const data::Vocabulary& vocab) {
            std::vector<double> out;
            for (const auto& s : eval::lr_baseline_score(model, pairs, vocab)) out.push_back(s.score);
            return out;
          },
          py::arg("pairs"), py::arg("vocab"));
  m.def("lr_features", &eval::lr_features, py::arg("pair"), py::arg("vocab"));
  m.def(
      "fit_lr_baseline",
      [](const std::vector<data::AnswerPair>& pairs, const data::Vocabulary& vocab) {
        return eval::lr_baseline_fit(pairs, vocab);
      },
      py::arg("pairs"), py::arg("vocab"));

  m.def(
      "train",
      [](const py::dict& settings, const std::function<void(const std::string&)>& log) {
        cli::RunConfig config;
        for (auto [key, value] : settings) config.set(py::str(key).cast<std::string>(), config_value(value));
        std::ostringstream out;
        training::TrainReport report;
        {
          py::gil_scoped_release release;
          report = cli::train_from_config(config, out);
        }
        if (log) log(out.str());
        py::list epochs;
        for (const auto& e : report.epochs) {
          py::dict d;
          d["epoch"] = e.epoch;
          d["train_loss"] = e.train_loss;
          d["train_accuracy"] = e.train_accuracy;
          d["val_loss"] = e.val_loss;
          d["val_accuracy"] = e.val_accuracy;
          d["val_auc"] = e.val_auc;
          epochs.append(d);
        }
        py::dict result;
        result["epochs"] = epochs;
        result["best_epoch"] = report.best_epoch;
        result["best_val_auc"] = report.best_val_auc;
        result["stopped_early"] = report.stopped_early;
        return result;
      },
      py::arg("settings"), py::arg("log") = nullptr,
      "Trains from run-config settings (data_dir and out_dir required) and returns the epoch history.");
  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& dataset, std::size_t batch_size) {
        return metrics_dict(eval::evaluate_checkpoint(checkpoint, dataset, batch_size));
      },
      py::arg("checkpoint"), py::arg("dataset"), py::arg("batch_size") = 64);
  m.def("grade", &cli::grade_pair, py::arg("checkpoint"), py::arg("student"), py::arg("reference"),
        "P(right) for one student answer against its reference.");
  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        py::list rows;
        for (const auto& e : diagnostics::run_gradcheck_suite(diagnostics::tiny_config(), seed))
          rows.append(py::make_tuple(e.name, e.max_relative_error, e.tolerance, e.passed()));
        return rows;
      },
      py::arg("seed") = 1, "Finite-difference checks at the tiny configuration: (name, error, tolerance, passed).");
  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "asag");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int status = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(status, out.str(), err.str());
      },
      py::arg("args"), "Runs one command-line invocation; returns (status, stdout, stderr).");
}
