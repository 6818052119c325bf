// Python bindings for the core operations.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mrai/eval.hpp"
#include "mrai/harness.hpp"
#include "mrai/io.hpp"
#include "mrai/pairs.hpp"
#include "mrai/phantom.hpp"
#include "mrai/siamese.hpp"

namespace py = pybind11;
using namespace mrai;

namespace {

using PatchList = std::vector<Patch>;
using Array2 = py::array_t<double, py::array::c_style | py::array::forcecast>;

FeatureMatrix to_matrix(const Array2& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  FeatureMatrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

py::array_t<double> to_array(const FeatureMatrix& m) {
  py::array_t<double> out({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

ExperimentConfig config_from_dict(const std::map<std::string, std::string>& kv) {
  auto c = config_from_key_values(KeyValues(kv.begin(), kv.end()));
  c.validate();
  return c;
}

py::dict cell_to_dict(const CellResult& r) {
  py::dict d;
  d["repetition"] = r.repetition;
  d["n"] = r.n;
  d["seed"] = r.seed;
  d["ok"] = r.ok;
  d["failure"] = r.failure;
  d["error_source"] = r.error_source;
  d["error_target"] = r.error_target;
  d["error_mrai"] = r.error_mrai;
  d["dA_raw"] = r.raw.distance;
  d["e_raw"] = r.raw.error;
  d["dA_mrai"] = r.mrai.distance;
  d["e_mrai"] = r.mrai.error;
  d["loss"] = r.history.loss;
  return d;
}

}  // namespace

PYBIND11_MAKE_OPAQUE(std::vector<mrai::Patch>);

PYBIND11_MODULE(_mrai, m) {
  m.doc() = "Siamese acquisition-invariant patch features: core bindings";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<TissueExhaustedError>(m, "TissueExhaustedError", PyExc_RuntimeError);

  py::enum_<Tissue>(m, "Tissue")
      .value("BG", Tissue::background)
      .value("CSF", Tissue::csf)
      .value("GM", Tissue::gray_matter)
      .value("WM", Tissue::white_matter);
  py::enum_<ScannerId>(m, "Scanner")
      .value("SOURCE", ScannerId::source)
      .value("TARGET", ScannerId::target);

  py::class_<PatchList>(m, "PatchList")
      .def(py::init<>())
      .def("__len__", [](const PatchList& p) { return p.size(); })
      .def("extend", [](PatchList& a, const PatchList& b) { a.insert(a.end(), b.begin(), b.end()); })
      .def_property_readonly("pixels",
                             [](const PatchList& p) {
                               py::array_t<float> out({p.size(), kPatchSize, kPatchSize});
                               float* dst = out.mutable_data();
                               for (const auto& q : p) dst = std::copy(q.pixels.begin(), q.pixels.end(), dst);
                               return out;
                             })
      .def_property_readonly("tissues",
                             [](const PatchList& p) {
                               py::array_t<int> out(p.size());
                               for (std::size_t i = 0; i < p.size(); ++i) {
                                 out.mutable_data()[i] = static_cast<int>(p[i].tissue);
                               }
                               return out;
                             })
      .def_property_readonly("subjects", [](const PatchList& p) {
        py::array_t<int> out(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) out.mutable_data()[i] = p[i].subject_id;
        return out;
      });

  // phantom-sim
  m.def("signal", [](double t1, double t2s, double pd, double flip, double tr, double te) {
    return spoiled_gre_signal({t1, t2s, pd}, flip, tr, te);
  }, py::arg("t1_ms"), py::arg("t2star_ms"), py::arg("pd"), py::arg("flip_deg"), py::arg("tr_ms"),
        py::arg("te_ms"));
  m.def("generate_phantom", [](std::uint64_t seed, std::size_t size, int subject) {
    const auto map = generate_phantom(seed, size, subject);
    py::array_t<std::uint8_t> out({map.height, map.width});
    for (std::size_t i = 0; i < map.labels.size(); ++i) {
      out.mutable_data()[i] = static_cast<std::uint8_t>(map.labels[i]);
    }
    return out;
  }, py::arg("seed"), py::arg("size") = 128, py::arg("subject") = 0);
  m.def("simulate_patches",
        [](std::uint64_t seed, std::size_t size, int subject, const std::string& scanner,
           std::size_t per_tissue, std::optional<double> noise_sigma) {
          const auto protocols = default_protocols();
          const bool target = scanner == "target";
          if (!target && scanner != "source") throw std::invalid_argument("scanner must be 'source' or 'target'");
          auto proto = target ? protocols.target : protocols.source;
          if (noise_sigma) proto.noise_sigma = *noise_sigma;
          const auto map = generate_phantom(seed, size, subject);
          const auto scan = simulate_scan(map, proto, target ? ScannerId::target : ScannerId::source,
                                          seed ^ 0x5ca9ULL);
          return extract_patches(scan, map, per_tissue,
                                 {kBrainTissues.begin(), kBrainTissues.end()}, seed ^ 0xba7cULL);
        },
        py::arg("seed"), py::arg("size") = 128, py::arg("subject") = 0, py::arg("scanner") = "source",
        py::arg("per_tissue") = 50, py::arg("noise_sigma") = py::none());

  // pair-engine
  m.def("count_pairs_paper", [](const std::vector<std::uint64_t>& n, const std::vector<std::uint64_t>& mm) {
    return count_pairs_paper(n, mm);
  });
  m.def("count_pairs_unordered", [](const std::vector<std::uint64_t>& n, const std::vector<std::uint64_t>& mm) {
    return count_pairs_unordered(n, mm);
  });
  m.def("sample_pairs",
        [](const PatchList& source, const PatchList& target, std::size_t budget, double frac,
           std::uint64_t seed) {
          const auto ps = sample_pairs(source, target, budget, frac, seed);
          py::array_t<std::int64_t> out({ps.size(), std::size_t{4}});
          auto* d = out.mutable_data();
          for (const auto& p : ps.pairs) {
            *d++ = p.index_a;
            *d++ = p.index_b;
            *d++ = p.y;
            *d++ = static_cast<std::int64_t>(p.type);
          }
          return py::make_tuple(out, ps.exhausted);
        },
        py::arg("source"), py::arg("target"), py::arg("budget"), py::arg("similar_fraction") = 0.5,
        py::arg("seed") = 0);

  // siamese-net
  m.def("l1_distance", [](const std::vector<double>& a, const std::vector<double>& b) {
    return l1_distance(a, b);
  });
  m.def("siamese_loss", [](const std::vector<double>& a, const std::vector<double>& b, int y, double margin) {
    return siamese_loss(a, b, y, margin);
  }, py::arg("fa"), py::arg("fb"), py::arg("y"), py::arg("margin") = 1.0);
  m.def("siamese_loss_grad", [](const std::vector<double>& a, const std::vector<double>& b, int y, double margin) {
    const auto g = siamese_loss_grad(a, b, y, margin);
    return py::make_tuple(g.loss, g.grad_a, g.grad_b);
  }, py::arg("fa"), py::arg("fb"), py::arg("y"), py::arg("margin") = 1.0);

  // eval
  m.def("proxy_a_distance_from_error", &proxy_a_distance_from_error);
  m.def("proxy_a_distance",
        [](const Array2& s, const Array2& t, std::uint64_t seed, std::size_t max_per_side) {
          ADistanceConfig cfg;
          cfg.max_per_side = max_per_side;
          const auto r = proxy_a_distance(to_matrix(s), to_matrix(t), cfg, seed);
          return py::make_tuple(r.distance, r.error);
        },
        py::arg("source"), py::arg("target"), py::arg("seed") = 0, py::arg("max_per_side") = 1500);
  m.def("cross_val_error",
        [](const Array2& x, const std::vector<int>& y, std::size_t folds, double c, std::uint64_t seed) {
          return cross_val_error(to_matrix(x), y, folds, SvmConfig{.c = c}, seed);
        },
        py::arg("x"), py::arg("y"), py::arg("folds") = 5, py::arg("c") = 1.0, py::arg("seed") = 0);
  m.def("svm_fit_predict",
        [](const Array2& x, const std::vector<int>& y, const Array2& test, double c, std::uint64_t seed) {
          const auto model = train_linear_svm(to_matrix(x), y, SvmConfig{.c = c}, seed);
          return model.predict(to_matrix(test));
        },
        py::arg("x"), py::arg("y"), py::arg("test"), py::arg("c") = 1.0, py::arg("seed") = 0);

  // harness
  m.def("default_config", [] {
    const auto kv = config_to_key_values(ExperimentConfig{});
    return std::map<std::string, std::string>(kv.begin(), kv.end());
  });
  m.def("run_cell",
        [](const std::map<std::string, std::string>& overrides, std::size_t repetition, std::size_t n) {
          const auto c = config_from_dict(overrides);
          CellResult r;
          {
            py::gil_scoped_release release;
            r = run_cell(c, repetition, n);
          }
          return cell_to_dict(r);
        },
        py::arg("config") = std::map<std::string, std::string>{}, py::arg("repetition") = 0,
        py::arg("n") = 10);
  m.def("curve_csv", [](const std::map<std::string, std::string>& overrides) {
    const auto c = config_from_dict(overrides);
    CurveResult curve;
    {
      py::gil_scoped_release release;
      curve = run_experiment(c);
    }
    return curve_csv(curve);
  }, py::arg("config") = std::map<std::string, std::string>{});
}
