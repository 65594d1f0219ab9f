#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cellxai/cli.hpp"
#include "cellxai/constitutive.hpp"
#include "cellxai/hypersearch.hpp"
#include "cellxai/loadgen.hpp"
#include "cellxai/xai.hpp"

namespace py = pybind11;
using namespace cellxai;

namespace {

py::array_t<double> channels_array(const loadgen::Dataset& data,
                                   const std::vector<std::vector<double>> MaterialRecord::*member,
                                   std::size_t channels) {
    const std::size_t m = data.size(), t = data.spec.seq_len;
    py::array_t<double> out({m, t, channels});
    auto view = out.mutable_unchecked<3>();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t k = 0; k < t; ++k) view(i, k, c) = (data.records[i].*member)[c][k];
    return out;
}

py::dict dataset_dict(const std::string& kind_name, std::size_t seq_len, std::size_t samples, std::uint64_t seed) {
    loadgen::SequenceSpec spec;
    spec.model_kind = parse_model_kind(kind_name);
    spec.seq_len = seq_len;
    spec.seed = seed;
    const auto data = loadgen::generate_dataset(spec, constitutive::default_params(spec.model_kind), samples);

    py::array_t<double> inputs({data.size(), seq_len});
    auto view = inputs.mutable_unchecked<2>();
    for (std::size_t i = 0; i < data.size(); ++i)
        for (std::size_t k = 0; k < seq_len; ++k) view(i, k) = data.records[i].input[k];

    py::dict d;
    d["inputs"] = inputs;
    d["targets"] = channels_array(data, &MaterialRecord::targets, target_names(spec.model_kind).size());
    d["histories"] = channels_array(data, &MaterialRecord::histories, history_names(spec.model_kind).size());
    d["train"] = data.split.train;
    d["valid"] = data.split.valid;
    d["test"] = data.split.test;
    d["dt"] = data.sequences.empty() ? 0.0 : data.sequences.front().dt;
    return d;
}

py::dict return_mapping(const std::vector<double>& strains, double e_mod, double sigma_y, double k_iso,
                        double h_kin) {
    const constitutive::PrandtlReussParams params{e_mod, sigma_y, k_iso, h_kin};
    py::array_t<double> stress(strains.size()), plastic(strains.size());
    auto s = stress.mutable_unchecked<1>();
    auto p = plastic.mutable_unchecked<1>();
    constitutive::PlasticState state{};
    for (std::size_t i = 0; i < strains.size(); ++i) {
        const auto step = constitutive::plastic_step(state, strains[i], params);
        state = step.state;
        s(i) = step.stress;
        p(i) = state.plastic_strain;
    }
    py::dict d;
    d["stress"] = stress;
    d["plastic_strain"] = plastic;
    return d;
}

py::list brackets(std::size_t max_epochs, double eta) {
    py::list out;
    for (const auto& plan : hypersearch::plan_brackets(max_epochs, eta)) {
        std::vector<std::size_t> configs, epochs;
        for (const auto& r : plan.rounds) {
            configs.push_back(r.configs);
            epochs.push_back(r.epochs);
        }
        py::dict d;
        d["s"] = plan.s;
        d["initial_configs"] = plan.initial_configs;
        d["configs"] = configs;
        d["epochs"] = epochs;
        out.append(d);
    }
    return out;
}

py::dict pca_dict(const Eigen::MatrixXd& states) {
    const auto r = xai::pca(states);
    const auto ratios = xai::importance_ratios(
        std::span<const double>(r.singular_values.data(), static_cast<std::size_t>(r.singular_values.size())));
    py::dict d;
    d["components"] = r.components;
    d["singular_values"] = r.singular_values;
    d["scores"] = r.scores;
    d["linear_importance"] = ratios.linear;
    d["squared_importance"] = ratios.squared;
    return d;
}

py::tuple run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "cellxai");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream out, err;
    int code = 0;
    {
        py::gil_scoped_release release;
        code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Constitutive reference models, load generation, Hyperband planning and cell-state PCA";
    m.attr("__version__") = cli::kToolVersion;

    m.def("target_names", [](const std::string& kind) { return target_names(parse_model_kind(kind)); },
          py::arg("kind"));
    m.def("history_names", [](const std::string& kind) { return history_names(parse_model_kind(kind)); },
          py::arg("kind"));
    m.def("neo_hooke_stress",
          [](double stretch, double mu) { return constitutive::neo_hooke_stress(stretch, {mu}); },
          py::arg("stretch"), py::arg("mu") = 1.0);
    m.def("relaxation_modulus",
          [](double t, double e_inf, double e_branch, double tau) {
              return constitutive::relaxation_modulus(t, {e_inf, e_branch, tau});
          },
          py::arg("t"), py::arg("e_inf") = 1.0, py::arg("e_branch") = 0.5, py::arg("tau") = 0.1667);
    m.def("creep_compliance",
          [](double t, double e_inf, double e_branch, double tau) {
              return constitutive::creep_compliance(t, {e_inf, e_branch, tau});
          },
          py::arg("t"), py::arg("e_inf") = 1.0, py::arg("e_branch") = 0.5, py::arg("tau") = 0.1667);
    m.def("return_mapping", &return_mapping, "Radial return along a total-strain path from rest",
          py::arg("strains"), py::arg("e_mod") = 1.0, py::arg("sigma_y") = 0.6, py::arg("k_iso") = 0.0,
          py::arg("h_kin") = 0.0);
    m.def("generate_dataset", &dataset_dict, "Random loading sequences and reference responses",
          py::arg("kind"), py::arg("seq_len") = 200, py::arg("samples") = 512, py::arg("seed") = 0);
    m.def("plan_brackets", &brackets, py::arg("max_epochs") = 51, py::arg("eta") = 3.7);
    m.def("pca", &pca_dict, "Principal components of a (increments, features) state matrix", py::arg("states"));
    m.def("run_cli", &run_cli, "Runs the command-line tool; returns (exit code, stdout, stderr)", py::arg("args"));
}
