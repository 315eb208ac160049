#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mristage/evaluation.hpp"
#include "mristage/run.hpp"
#include "mristage/training.hpp"

namespace py = pybind11;
using namespace mristage;

namespace {

// nlohmann json <-> Python objects by way of the json module
py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_py(const py::object& obj) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::dict record_dict(const SampleRecord& r) {
  py::dict d;
  d["path"] = r.path.generic_string();
  d["label"] = r.label.name;
  d["label_index"] = r.label.index;
  d["split"] = std::string(to_string(r.split));
  d["source"] = std::string(to_string(r.source));
  d["content_hash"] = format_hash(r.content_hash);
  return d;
}

struct CommandResult {
  int exit_code;
  std::string out;
  std::string err;
};

template <typename Fn>
CommandResult capture(Fn&& fn) {
  std::ostringstream out, err;
  const int code = fn(out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

PYBIND11_MODULE(_mristage, m) {
  m.doc() = "Dementia-stage MRI classification pipeline";

  py::register_exception<DatasetError>(m, "DatasetError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::enum_<Split>(m, "Split")
      .value("TRAIN", Split::Train)
      .value("VAL", Split::Val)
      .value("TEST", Split::Test)
      .value("UNASSIGNED", Split::Unassigned);

  py::class_<DatasetManifest>(m, "DatasetManifest")
      .def_property_readonly("classes",
                             [](const DatasetManifest& d) {
                               std::vector<std::string> names;
                               for (const auto& c : d.classes) names.push_back(c.name);
                               return names;
                             })
      .def_property_readonly("records",
                             [](const DatasetManifest& d) {
                               py::list out;
                               for (const auto& r : d.records) out.append(record_dict(r));
                               return out;
                             })
      .def_readonly("warnings", &DatasetManifest::warnings)
      .def("__len__", [](const DatasetManifest& d) { return d.records.size(); })
      .def("distribution", [](const DatasetManifest& d, Split s) { return class_distribution(d, s); })
      .def("save_csv", [](const DatasetManifest& d, const fs::path& file) { save_manifest_csv(d, file); });

  m.def("scan_dataset", [](const fs::path& root, bool augmented) {
    return scan_dataset(root, augmented ? Source::Augmented : Source::Original);
  }, py::arg("root"), py::arg("augmented") = false);
  m.def(
      "assign_paper_splits",
      [](const DatasetManifest& augmented, const DatasetManifest& original, double val_fraction,
         std::uint64_t seed, const std::string& partition) {
        RunConfig c;
        c.eval_partition = partition;
        return assign_paper_splits(augmented, original, val_fraction, seed, c.partition());
      },
      py::arg("augmented"), py::arg("original"), py::arg("val_fraction") = 0.5, py::arg("seed") = 42,
      py::arg("partition") = "disjoint");
  m.def(
      "stratified_split",
      [](const DatasetManifest& d, double train, double val, double test, std::uint64_t seed) {
        return stratified_split(d, SplitFractions{train, val, test}, seed);
      },
      py::arg("manifest"), py::arg("train") = 0.8, py::arg("val") = 0.1, py::arg("test") = 0.1,
      py::arg("seed") = 42);
  m.def("load_manifest", &load_manifest_csv, py::arg("file"));
  m.def("audit_leakage", [](const DatasetManifest& d) { return to_py(to_json(audit_leakage(d))); });

  m.def(
      "classification_report",
      [](const std::vector<int>& y_true, const std::vector<int>& y_pred, std::size_t num_classes,
         const std::vector<std::string>& names) {
        std::vector<ClassLabel> classes;
        for (std::size_t k = 0; k < names.size(); ++k) classes.push_back({static_cast<int>(k), names[k]});
        const auto report = make_report(confusion_matrix(y_true, y_pred, num_classes), classes);
        return py::make_tuple(to_py(to_json(report)), render_report(report));
      },
      py::arg("y_true"), py::arg("y_pred"), py::arg("num_classes"), py::arg("class_names") = std::vector<std::string>{},
      "Returns (report dict, rendered table).");

  m.def(
      "head_parameter_summary",
      [](std::size_t embedding_dim, std::size_t num_classes, std::size_t dense_units) {
        HeadSpec spec;
        spec.num_classes = num_classes;
        spec.dense_units = dense_units;
        const auto s = parameter_summary(build_model(stub_backbone(0, embedding_dim), spec, 0));
        py::list layers;
        for (const auto& l : s.layers) {
          py::dict d;
          d["name"] = l.name;
          d["kind"] = l.kind;
          d["params"] = l.param_count;
          d["trainable"] = l.trainable;
          layers.append(d);
        }
        py::dict out;
        out["layers"] = layers;
        out["head_total"] = s.head_total;
        return out;
      },
      py::arg("embedding_dim") = 2048, py::arg("num_classes") = 4, py::arg("dense_units") = 128);

  m.def(
      "early_stopping",
      [](const std::vector<double>& values, std::size_t patience, bool lower_is_better) {
        const auto d = early_stopping_decision(values, lower_is_better, patience);
        return py::make_tuple(d.stop, d.best_epoch);
      },
      py::arg("values"), py::arg("patience"), py::arg("lower_is_better") = true,
      "Returns (stop, best_epoch) with 1-based epochs.");

  m.def("default_config", [] { return to_py(RunConfig{}.to_json()); });

  py::class_<CommandResult>(m, "CommandResult")
      .def_readonly("exit_code", &CommandResult::exit_code)
      .def_readonly("out", &CommandResult::out)
      .def_readonly("err", &CommandResult::err);

  m.def(
      "train",
      [](const py::dict& config) {
        const auto c = RunConfig::from_json(from_py(config));
        py::gil_scoped_release release;
        return capture([&](std::ostream& o, std::ostream& e) { return cmd_train(c, o, e); });
      },
      py::arg("config"));
  m.def(
      "evaluate",
      [](const std::string& run_dir, const std::string& checkpoint, const std::string& split) {
        EvaluateOptions opts{run_dir, checkpoint, split};
        py::gil_scoped_release release;
        return capture([&](std::ostream& o, std::ostream& e) { return cmd_evaluate(opts, o, e); });
      },
      py::arg("run_dir"), py::arg("checkpoint") = "", py::arg("split") = "test");
  m.def(
      "audit",
      [](const std::string& manifest, const std::string& json_output) {
        AuditOptions opts{manifest, json_output};
        return capture([&](std::ostream& o, std::ostream& e) { return cmd_audit(opts, o, e); });
      },
      py::arg("manifest"), py::arg("json_output") = "");
}
