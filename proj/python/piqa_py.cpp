#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "piqa/cli.hpp"
#include "piqa/dataset.hpp"
#include "piqa/error.hpp"
#include "piqa/metrics.hpp"
#include "piqa/prompt_bank.hpp"
#include "piqa/ranking.hpp"

namespace py = pybind11;
using namespace piqa;

namespace {

PyObject* g_error_type = nullptr;

std::vector<metrics::ScoredRecord> to_records(const std::vector<std::tuple<std::string, double, double>>& rows) {
  std::vector<metrics::ScoredRecord> out;
  out.reserve(rows.size());
  for (const auto& [scene, pred, gt] : rows) out.push_back({scene, pred, gt});
  return out;
}

}  // namespace

PYBIND11_MODULE(_piqa, m) {
  m.doc() = "portrait quality assessment core";

  g_error_type = PyErr_NewException("piqa._piqa.PiqaError", PyExc_RuntimeError, nullptr);
  m.add_object("PiqaError", py::handle(g_error_type));
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::reinterpret_steal<py::object>(PyObject_CallFunction(g_error_type, "s", e.what()));
      inst.attr("code") = std::string(errc_name(e.code()));
      PyErr_SetObject(g_error_type, inst.ptr());
    }
  });

  m.def("binary_label", &dataset::binary_label, py::arg("q_x"), py::arg("q_y"));
  m.def("pair_count", &dataset::pair_count, py::arg("scene_size"));

  m.def("normal_cdf", &ranking::normal_cdf, py::arg("z"));
  m.def("pair_probability", &ranking::pair_probability, py::arg("q_hat_x"), py::arg("q_hat_y"));
  m.def("fidelity_loss", &ranking::fidelity_loss, py::arg("p"), py::arg("p_hat"));
  m.def(
      "pair_loss",
      [](double x, double y, int label) {
        const auto r = ranking::pair_loss(x, y, label);
        py::dict d;
        d["p_hat"] = r.p_hat;
        d["label"] = r.label;
        d["loss"] = r.loss;
        d["grad_x"] = r.grad_x;
        d["grad_y"] = r.grad_y;
        return d;
      },
      py::arg("q_hat_x"), py::arg("q_hat_y"), py::arg("label"));
  m.def(
      "batch_loss",
      [](const std::vector<double>& x, const std::vector<double>& y, const std::vector<int>& labels) {
        const auto r = ranking::batch_loss(x, y, labels);
        return py::make_tuple(r.mean, r.grad_x, r.grad_y);
      },
      py::arg("q_hat_x"), py::arg("q_hat_y"), py::arg("labels"));

  m.def("srcc", [](const std::vector<double>& p, const std::vector<double>& g) { return metrics::srcc(p, g); });
  m.def("krcc", [](const std::vector<double>& p, const std::vector<double>& g) { return metrics::krcc(p, g); });
  m.def("plcc", [](const std::vector<double>& p, const std::vector<double>& g) { return metrics::plcc(p, g); });
  m.def("mae", [](const std::vector<double>& p, const std::vector<double>& g) { return metrics::mae(p, g); });
  m.def("pearson", [](const std::vector<double>& a, const std::vector<double>& b) { return metrics::pearson(a, b); });
  m.def("exact_sum", [](const std::vector<double>& v) { return metrics::exact_sum(v); });
  m.def("fit_logistic", [](const std::vector<double>& p, const std::vector<double>& g) {
    const auto f = metrics::fit_logistic(p, g);
    py::dict d;
    d["beta"] = py::make_tuple(f.beta1, f.beta2, f.beta3, f.beta4);
    d["fallback"] = f.fallback;
    d["slope"] = f.slope;
    d["intercept"] = f.intercept;
    d["mapped"] = f.apply(p);
    return d;
  });
  // rows are (scene_id, prediction, ground_truth); returns the report as JSON text
  m.def(
      "evaluate_grouped",
      [](const std::vector<std::tuple<std::string, double, double>>& rows, std::size_t min_scene_size) {
        const auto recs = to_records(rows);
        return metrics::to_json(metrics::evaluate_grouped(recs, min_scene_size)).dump();
      },
      py::arg("records"), py::arg("min_scene_size") = 2);

  m.def("prompts", [] { return prompt::build_grid().prompts(); });
  m.def("render_prompt", &prompt::render_prompt, py::arg("scene"), py::arg("distortion"), py::arg("level"));

  m.def(
      "score",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& image,
         std::optional<std::tuple<int, int, int, int>> face, bool allow_fallback, bool verbose,
         const std::string& detector_command) {
        cli::ScoreOptions o;
        o.checkpoint = checkpoint;
        o.image = image;
        if (face) {
          const auto [x, y, w, h] = *face;
          o.face_box = dataset::FaceBox{x, y, w, h};
        }
        o.allow_fallback = allow_fallback;
        o.verbose = verbose;
        o.detector_command = detector_command;
        std::ostringstream err;
        return cli::cmd_score(o, err);
      },
      py::arg("checkpoint"), py::arg("image"), py::arg("face") = py::none(), py::arg("allow_fallback") = false,
      py::arg("verbose") = false, py::arg("detector_command") = "");

  m.def(
      "run",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
