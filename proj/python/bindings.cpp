// Python bindings. JSON-shaped values cross the boundary as strings; the
// `vislex` package wraps them with the json module.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "vislex/analysis.hpp"
#include "vislex/config.hpp"
#include "vislex/errors.hpp"
#include "vislex/metrics.hpp"
#include "vislex/pipeline.hpp"
#include "vislex/synthetic.hpp"

namespace py = pybind11;
using namespace vislex;

namespace {

WordFrequencyProfile profile_from(const std::map<std::string, long>& counts) {
  WordFrequencyProfile p;
  p.counts = counts;
  p.rerank();
  return p;
}

py::dict profile_dict(const WordFrequencyProfile& p) {
  py::dict d;
  d["counts"] = p.counts;
  d["total"] = p.total;
  d["ranked"] = p.ranked;
  return d;
}

py::array_t<double> image_array(const ImageTensor& img) {
  py::array_t<double> a({img.height(), img.width(), img.channels()});
  std::copy(img.data().begin(), img.data().end(), a.mutable_data());
  return a;
}

StopwordSet stopwords_or_default(const std::optional<std::vector<std::string>>& words) {
  if (!words) return default_stopwords();
  return StopwordSet(words->begin(), words->end());
}

}  // namespace

PYBIND11_MODULE(_vislex, m) {
  m.doc() = "Textual explanations of frozen image classifiers";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<ContextError>(m, "ContextError", PyExc_RuntimeError);
  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ArtifactError>(m, "ArtifactError", PyExc_FileNotFoundError);

  m.def("nucleus_filter",
        [](const std::vector<double>& dist, double top_p) { return nucleus_filter(dist, top_p); },
        py::arg("dist"), py::arg("top_p"));
  m.def("default_min_count", &default_min_count, py::arg("n_samples"));
  m.def("default_stopwords", [] { return std::vector<std::string>(default_stopwords().begin(), default_stopwords().end()); });

  m.def("rouge_l", [](const std::string& c, const std::string& r) { return rouge_l(c, r); },
        py::arg("candidate"), py::arg("reference"));
  m.def("meteor_lite", [](const std::string& c, const std::string& r) { return meteor_lite(c, r); },
        py::arg("candidate"), py::arg("reference"));
  m.def("bow_cosine",
        [](const std::string& a, const std::string& b, std::optional<std::vector<std::string>> stop) {
          return bow_cosine(a, b, stopwords_or_default(stop));
        },
        py::arg("a"), py::arg("b"), py::arg("stopwords") = py::none());
  m.def("jensen_shannon", &jensen_shannon, py::arg("p"), py::arg("q"));

  m.def("word_profile",
        [](const std::vector<std::string>& sentences, long min_count, std::optional<std::vector<std::string>> stop) {
          return profile_dict(word_profile(sentences, stopwords_or_default(stop), min_count));
        },
        py::arg("sentences"), py::arg("min_count") = 1, py::arg("stopwords") = py::none());
  m.def("detect_spurious",
        [](const std::map<std::string, long>& counts, const std::vector<std::string>& terms, const std::string& label) {
          return detect_spurious(profile_from(counts), TermSet(terms.begin(), terms.end()), label).to_json().dump();
        },
        py::arg("counts"), py::arg("class_terms"), py::arg("label") = "");
  m.def("select_problematic",
        [](const std::vector<std::tuple<std::string, int, std::map<std::string, long>>>& samples,
           const std::map<int, std::vector<std::string>>& terms) {
          std::vector<SampleProfile> sp;
          for (const auto& [id, label, counts] : samples) sp.push_back({id, label, profile_from(counts)});
          std::map<int, TermSet> t;
          for (const auto& [k, v] : terms) t[k] = TermSet(v.begin(), v.end());
          return select_problematic(sp, t).ids;
        },
        py::arg("samples"), py::arg("class_terms"));

  m.def("generate_synthetic",
        [](const std::string& spec_json) {
          const auto ds = generate_synthetic(SyntheticSpec::from_json(nlohmann::json::parse(spec_json)));
          py::list out;
          for (size_t i = 0; i < ds.images.size(); ++i) {
            const auto& r = ds.manifest.records[i];
            py::dict d;
            d["id"] = r.id;
            d["split"] = r.split;
            d["caption"] = r.caption;
            d["label"] = r.label;
            d["background"] = r.background;
            d["subgroup"] = r.subgroup ? py::object(py::int_(*r.subgroup)) : py::object(py::none());
            d["image"] = image_array(ds.images[i]);
            out.append(d);
          }
          return out;
        },
        py::arg("spec_json"));

  m.def("default_config", [] { return default_run_config().to_json().dump(); });
  m.def("load_config", [](const std::filesystem::path& p) { return RunConfig::load(p).to_json().dump(); });
  m.def("config_digest",
        [](const std::string& cfg_json) { return RunConfig::from_json(nlohmann::json::parse(cfg_json)).digest(); });
  m.def("pipeline_commands", &pipeline_commands);
  m.def("run_command",
        [](const std::string& name, const std::string& cfg_json) {
          RunConfig cfg = RunConfig::from_json(nlohmann::json::parse(cfg_json));
          cfg.validate();
          py::gil_scoped_release release;
          return run_command(name, cfg).dump();
        },
        py::arg("name"), py::arg("config_json"));
}
