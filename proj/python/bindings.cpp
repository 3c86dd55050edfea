#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mdgnn/exp_cli.hpp"

namespace py = pybind11;
using namespace mdgnn;

namespace {

py::array_t<cplx> to_numpy(const ComplexTensor3& t) {
  py::array_t<cplx> a({t.M, t.K, t.N});
  std::copy(t.v.begin(), t.v.end(), a.mutable_data());
  return a;
}

ComplexTensor3 from_numpy(const py::array_t<cplx, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3) throw std::invalid_argument("expected a complex array of shape (M, K, N)");
  ComplexTensor3 t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                   static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + t.v.size(), t.v.begin());
  return t;
}

py::array_t<double> tensor_to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  std::copy(t.data(), t.data() + t.size(), a.mutable_data());
  return a;
}

Tensor tensor_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int> shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<int>(a.shape(i)));
  Tensor t(shape);
  std::copy(a.data(), a.data() + t.size(), t.data());
  return t;
}

}  // namespace

PYBIND11_MODULE(_mdgnn, mod) {
  mod.doc() = "Permutation-equivariant GNNs with edge-graph bottleneck training "
              "for cell-free massive MIMO";

  py::class_<SystemConfig>(mod, "SystemConfig")
      .def(py::init<>())
      .def_readwrite("M", &SystemConfig::M)
      .def_readwrite("K", &SystemConfig::K)
      .def_readwrite("N", &SystemConfig::N)
      .def_readwrite("area_side", &SystemConfig::area_side)
      .def_readwrite("noise_power_dbm", &SystemConfig::noise_power_dbm)
      .def_readwrite("bandwidth_hz", &SystemConfig::bandwidth_hz)
      .def_readwrite("p_max_watt", &SystemConfig::p_max_watt)
      .def_readwrite("fairness_weights", &SystemConfig::fairness_weights)
      .def_readwrite("shadow_fading", &SystemConfig::shadow_fading)
      .def_readwrite("normalize_gain", &SystemConfig::normalize_gain)
      .def("validate", &SystemConfig::validate)
      .def("noise_power_watt", &SystemConfig::noise_power_watt);

  py::class_<ChannelRealization>(mod, "ChannelRealization")
      .def_property_readonly("h_true",
                             [](const ChannelRealization& d) { return to_numpy(d.h_true); })
      .def_property_readonly("h_observed",
                             [](const ChannelRealization& d) { return to_numpy(d.h_observed); })
      .def_readonly("sigma_i_sq", &ChannelRealization::sigma_i_sq)
      .def_readonly("noise_power_eff", &ChannelRealization::noise_power_eff)
      .def_readonly("seed", &ChannelRealization::seed);

  mod.def("generate_channel", &generate_channel, py::arg("cfg"), py::arg("sigma_i_sq"),
          py::arg("seed"));
  mod.def("save_channel_snapshot", &save_channel_snapshot, py::arg("path"), py::arg("draws"));
  mod.def("load_channel_snapshot", &load_channel_snapshot, py::arg("path"));

  mod.def(
      "sum_se_precoding",
      [](const py::array_t<cplx>& h, const py::array_t<cplx>& w, const SystemConfig& cfg,
         double noise_power) {
        PrecodingSolution sol{from_numpy(w)};
        return sum_se_precoding(from_numpy(h), sol, cfg, noise_power);
      },
      py::arg("h"), py::arg("w"), py::arg("cfg"), py::arg("noise_power") = -1.0);

  mod.def(
      "sum_se_power",
      [](const py::array_t<cplx>& h, const py::array_t<double>& p, const py::array_t<cplx>& basis,
         const SystemConfig& cfg, double noise_power) {
        PowerSolution sol;
        sol.p = tensor_from_numpy(p);
        sol.basis = from_numpy(basis);
        return sum_se_power(from_numpy(h), sol, cfg, noise_power);
      },
      py::arg("h"), py::arg("p"), py::arg("basis"), py::arg("cfg"), py::arg("noise_power") = -1.0);

  mod.def(
      "wmmse_precoding",
      [](const py::array_t<cplx>& h, const SystemConfig& cfg, int max_iters, double noise_power) {
        WmmseConfig wcfg;
        wcfg.max_iters = max_iters;
        WmmseResult r = wmmse_precoding(from_numpy(h), cfg, wcfg, noise_power);
        return py::make_tuple(to_numpy(r.solution.w), r.objective_trace, r.iterations);
      },
      py::arg("h"), py::arg("cfg"), py::arg("max_iters") = 200, py::arg("noise_power") = -1.0,
      "Returns (w, objective_trace, iterations).");

  mod.def(
      "zf_basis",
      [](const py::array_t<cplx>& h, const SystemConfig& cfg) {
        return to_numpy(zf_basis(from_numpy(h), cfg).basis);
      },
      py::arg("h"), py::arg("cfg"));
  mod.def(
      "lmmse_basis",
      [](const py::array_t<cplx>& h, const SystemConfig& cfg, double noise_power) {
        return to_numpy(lmmse_basis(from_numpy(h), cfg, noise_power).basis);
      },
      py::arg("h"), py::arg("cfg"), py::arg("noise_power") = -1.0);

  mod.def(
      "wmmse_power",
      [](const py::array_t<cplx>& h, const py::array_t<cplx>& basis, const SystemConfig& cfg,
         int max_iters, double noise_power) {
        WmmseConfig wcfg;
        wcfg.max_iters = max_iters;
        PowerSolution b;
        b.basis = from_numpy(basis);
        WmmsePowerResult r = wmmse_power(from_numpy(h), b, cfg, wcfg, noise_power);
        return py::make_tuple(tensor_to_numpy(r.solution.p), r.objective_trace, r.iterations);
      },
      py::arg("h"), py::arg("basis"), py::arg("cfg"), py::arg("max_iters") = 200,
      py::arg("noise_power") = -1.0, "Returns (p, objective_trace, iterations).");

  mod.def(
      "structure_param_count",
      [](const std::string& structure, const std::string& task, int M, int K, int N, int cin,
         int cout, bool topological) {
        GraphSpec g = build_graph(structure, task, M, K, N);
        PermStructure s = g.structure.with_channels(cin, cout);
        s.topological = topological;
        return count_parameters(s) * cin * cout;
      },
      py::arg("structure"), py::arg("task"), py::arg("M"), py::arg("K"), py::arg("N"),
      py::arg("cin") = 1, py::arg("cout") = 1, py::arg("topological") = true,
      "Free parameters of one structured layer (shared blocks times C_in*C_out).");

  py::class_<GibConfig>(mod, "GibConfig")
      .def(py::init<>())
      .def_static("defaults_for", &GibConfig::defaults_for, py::arg("L"))
      .def_readwrite("beta", &GibConfig::beta)
      .def_readwrite("alpha", &GibConfig::alpha)
      .def_readwrite("mixture_X", &GibConfig::mixture_X)
      .def_readwrite("s_e", &GibConfig::s_e)
      .def_readwrite("s_a", &GibConfig::s_a)
      .def_readwrite("temperature", &GibConfig::temperature)
      .def_readwrite("reward_on_observed", &GibConfig::reward_on_observed)
      .def("validate", &GibConfig::validate, py::arg("L"));

  py::class_<ModelConfig>(mod, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("L", &ModelConfig::L)
      .def_readwrite("channels", &ModelConfig::channels)
      .def_readwrite("activation", &ModelConfig::activation)
      .def_property(
          "family", [](const ModelConfig& c) { return family_name(c.family); },
          [](ModelConfig& c, const std::string& s) { c.family = family_from(s); })
      .def_readwrite("structure", &ModelConfig::structure)
      .def_property(
          "head",
          [](const ModelConfig& c) {
            return c.head == HeadKind::precoding ? "precoding" : "power";
          },
          [](ModelConfig& c, const std::string& s) {
            if (s == "precoding") c.head = HeadKind::precoding;
            else if (s == "power") c.head = HeadKind::power;
            else throw std::invalid_argument("head must be 'precoding' or 'power'");
          })
      .def_readwrite("normalize_input", &ModelConfig::normalize_input)
      .def("input_channels", &ModelConfig::input_channels, py::arg("N"));

  py::class_<Model>(mod, "Model")
      .def_property_readonly("num_params", &Model::num_params)
      .def_property(
          "params",
          [](const Model& m) {
            py::array_t<double> a(static_cast<py::ssize_t>(m.params.size()));
            std::copy(m.params.begin(), m.params.end(), a.mutable_data());
            return a;
          },
          [](Model& m, const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
            if (static_cast<std::size_t>(a.size()) != m.params.size())
              throw std::invalid_argument("parameter vector size mismatch");
            std::copy(a.data(), a.data() + a.size(), m.params.begin());
          })
      .def_property_readonly("segments",
                             [](const Model& m) {
                               py::list out;
                               for (const ParamSegment& s : m.segments)
                                 out.append(py::make_tuple(s.name, s.shape, s.offset, s.size));
                               return out;
                             })
      .def("save", &save_model, py::arg("path"));

  mod.def(
      "build_model",
      [](const ModelConfig& cfg, const SystemConfig& sys, const GibConfig& gib,
         std::uint64_t seed) {
        Rng rng(seed);
        return build_model(cfg, sys, gib, rng);
      },
      py::arg("cfg"), py::arg("sys"), py::arg("gib"), py::arg("seed"));
  mod.def("load_model", &load_model, py::arg("path"));

  py::class_<TrainConfig>(mod, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("steps", &TrainConfig::steps)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("sigma_i_sq", &TrainConfig::sigma_i_sq)
      .def_property(
          "basis", [](const TrainConfig& c) { return basis_name(c.basis); },
          [](TrainConfig& c, const std::string& s) { c.basis = basis_from(s); })
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("lr_final_frac", &TrainConfig::lr_final_frac)
      .def_readwrite("clip_norm", &TrainConfig::clip_norm);

  mod.def(
      "train",
      [](Model& m, const GibConfig& gib, const TrainConfig& tc) {
        TrainResult r = train(m, gib, tc);
        py::list hist;
        for (const StepRecord& s : r.history)
          hist.append(py::dict(py::arg("step") = s.step, py::arg("loss") = s.loss,
                               py::arg("reward") = s.reward, py::arg("a_term") = s.a_term,
                               py::arg("e_term") = s.e_term, py::arg("grad_norm") = s.grad_norm));
        return py::make_tuple(hist, r.diverged);
      },
      py::arg("model"), py::arg("gib"), py::arg("config"),
      "Optimizes model parameters in place; returns (history, diverged).");

  mod.def(
      "evaluate_model",
      [](const Model& m, const GibConfig& gib, double sigma_i_sq, int n_draws, std::uint64_t seed,
         const std::string& basis) {
        return evaluate_model(m, gib, sigma_i_sq, n_draws, seed, basis_from(basis));
      },
      py::arg("model"), py::arg("gib"), py::arg("sigma_i_sq"), py::arg("n_draws"), py::arg("seed"),
      py::arg("basis") = "none");

  mod.def(
      "eval_precoding",
      [](const Model& m, const py::array_t<cplx>& h_observed, const GibConfig& gib,
         std::uint64_t seed) {
        Rng rng(seed);
        return to_numpy(eval_precoding(m, from_numpy(h_observed).to_real(), gib, rng).w);
      },
      py::arg("model"), py::arg("h_observed"), py::arg("gib"), py::arg("seed"));

  mod.def("format_percent", &format_percent, py::arg("se"), py::arg("baseline_se"));
  mod.def("worker_count", &worker_count);
}
