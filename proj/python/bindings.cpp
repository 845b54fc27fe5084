#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "icl/commands.hpp"
#include "icl/errors.hpp"
#include "icl/evaluation.hpp"
#include "icl/posterior.hpp"
#include "icl/transformer.hpp"
#include "icl/tree_posterior.hpp"

namespace py = pybind11;
using namespace icl;

namespace {

MixtureComponent haar_component(double alpha, std::optional<int> L_max, int ambient_dim, const std::string& label,
                                double sigma) {
  BesovPriorSpec s;
  s.alpha = alpha;
  s.max_level = L_max ? *L_max : default_max_level(alpha, s.C0, s.basis, sigma / 10.0);
  MixtureComponent c{label.empty() ? "alpha" + std::to_string(alpha) : label, s, ambient_dim};
  if (c.multi_index()) c.as_multi_index().validate();
  else s.validate();
  return c;
}

DomainSampler domain_for(const MixtureSpec& mix) { return DomainSampler::for_mixture(mix); }

}  // namespace

PYBIND11_MODULE(_icl_lab, m) {
  m.doc() = "Bayesian in-context regression lab";

  py::register_exception<Error>(m, "IclError", PyExc_RuntimeError);

  py::class_<MixtureComponent>(m, "Component")
      .def_readonly("label", &MixtureComponent::label)
      .def_property_readonly("alpha", [](const MixtureComponent& c) { return c.besov.alpha; })
      .def_property_readonly("L_max", [](const MixtureComponent& c) { return c.besov.max_level; })
      .def_readonly("ambient_dim", &MixtureComponent::ambient_dim);

  py::class_<MixtureSpec>(m, "Prior")
      .def_readonly("components", &MixtureSpec::components)
      .def_readonly("weights", &MixtureSpec::weights)
      .def_property_readonly("input_dim", &MixtureSpec::input_dim)
      .def_property_readonly("sup_norm_bound", [](const MixtureSpec& p) { return sup_norm_bound(p); });

  m.def("haar_component", &haar_component, py::arg("alpha"), py::arg("L_max") = py::none(),
        py::arg("ambient_dim") = 0, py::arg("label") = "", py::arg("sigma") = 0.25,
        "Haar prior component; L_max defaults to a truncation tail below sigma / 10.");
  m.def(
      "haar_prior",
      [](double alpha, std::optional<int> L_max, int ambient_dim, double sigma) {
        return MixtureSpec::single(haar_component(alpha, L_max, ambient_dim, "", sigma));
      },
      py::arg("alpha"), py::arg("L_max") = py::none(), py::arg("ambient_dim") = 0, py::arg("sigma") = 0.25);
  m.def(
      "mixture",
      [](std::vector<MixtureComponent> comps, std::vector<double> weights) {
        MixtureSpec mix{std::move(comps), std::move(weights)};
        mix.validate();
        return mix;
      },
      py::arg("components"), py::arg("weights"));

  py::class_<Episode>(m, "Episode")
      .def_readonly("d", &Episode::d)
      .def_property_readonly("n", &Episode::n)
      .def_readonly("xs", &Episode::xs)
      .def_readonly("ys", &Episode::ys)
      .def_readonly("query", &Episode::query)
      .def_readonly("target", &Episode::target)
      .def_readonly("g_at_query", &Episode::g_at_query)
      .def_readonly("component_label", &Episode::component_label)
      .def("to_json", [](const Episode& e) { return to_json(e).dump(); });

  m.def(
      "episodes",
      [](const MixtureSpec& prior, std::uint64_t count, int n, double sigma, std::uint64_t seed) {
        PretrainingStream stream(prior, count, n, NoiseSpec{sigma}, domain_for(prior), seed);
        std::vector<Episode> out;
        out.reserve(count);
        for (const auto& e : stream) out.push_back(e);
        return out;
      },
      py::arg("prior"), py::arg("count"), py::arg("n"), py::arg("sigma") = 0.25, py::arg("seed") = 0,
      "Episode t depends only on (seed, t).");

  py::class_<BayesOracle>(m, "BayesOracle")
      .def(py::init<const MixtureSpec&, double>(), py::arg("prior"), py::arg("sigma") = 0.25)
      .def("predict", [](const BayesOracle& o, const Episode& e) { return o.predict(e, e.query); })
      .def_property_readonly("R", &BayesOracle::R);

  m.def(
      "posterior_mean_mc",
      [](const Episode& e, const MixtureSpec& prior, int M, double sigma, std::uint64_t seed) {
        OracleConfig cfg;
        cfg.M = M;
        cfg.sigma = sigma;
        cfg.R = sup_norm_bound(prior);
        Rng rng(seed);
        return posterior_mean(e, e.query, prior, cfg, rng);
      },
      py::arg("episode"), py::arg("prior"), py::arg("M") = 4096, py::arg("sigma") = 0.25, py::arg("seed") = 0);

  py::class_<TransformerParams>(m, "Model")
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); })
      .def_property_readonly("hash", [](const TransformerParams& p) { return params_hash(p); })
      .def(
          "predict",
          [](const TransformerParams& p, const Episode& e, double R) { return predict_clipped(p, e, e.query, R); },
          py::arg("episode"), py::arg("R"));

  m.def("target_exponent", &target_exponent, py::arg("beta"), py::arg("dim"));
  m.def(
      "fit_rate",
      [](const std::vector<int>& grid, const std::vector<double>& means, const std::vector<double>& ses,
         double target) {
        const auto f = fit_rate(grid, means, ses, target);
        return py::dict(py::arg("slope") = f.slope, py::arg("slope_se") = f.slope_se,
                        py::arg("intercept") = f.intercept, py::arg("r2") = f.r2, py::arg("target") = f.target);
      },
      py::arg("grid"), py::arg("means"), py::arg("ses"), py::arg("target"));

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "icl_lab");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        return run_cli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs the command line in process and returns its exit code.");
}
