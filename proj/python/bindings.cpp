#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "gradfeat/checkpoint.hpp"
#include "gradfeat/dataset.hpp"
#include "gradfeat/error.hpp"
#include "gradfeat/experiment.hpp"
#include "gradfeat/models.hpp"
#include "gradfeat/oracle.hpp"
#include "gradfeat/tangent.hpp"

namespace py = pybind11;
using namespace gradfeat;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
    Shape s(a.shape(), a.shape() + a.ndim());
    return Tensor(s, std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_numpy(const Tensor& t) {
    py::array_t<float> a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.values().begin(), t.values().end(), a.mutable_data());
    return a;
}

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_python(const py::object& o) {
    return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::dict dataset_dict(const Dataset& d) {
    py::dict out;
    out["images"] = to_numpy(d.images);
    out["labels"] = d.labels;
    out["num_classes"] = d.num_classes;
    return out;
}

Dataset make_dataset(const FloatArray& images, const std::vector<int>& labels, std::size_t num_classes) {
    Dataset d{to_tensor(images), labels, Split::train, num_classes};
    d.validate();
    return d;
}

} // namespace

PYBIND11_MODULE(_gradfeat, m) {
    m.doc() = "Gradient features from pretrained convolutional networks";

    py::register_exception<Error>(m, "Error");

    py::class_<NetworkDef>(m, "NetworkDef")
        .def_property_readonly("feature_dim", &NetworkDef::feature_dim)
        .def_property_readonly("theta2_names", &NetworkDef::theta2_names)
        .def_property_readonly("param_names", &NetworkDef::param_names)
        .def_readonly("split_index", &NetworkDef::split_index)
        .def("to_json", [](const NetworkDef& d) { return to_json(d).dump(); })
        .def_static("from_json", [](const std::string& s) { return network_from_json(nlohmann::json::parse(s)); })
        .def("with_theta2", [](const NetworkDef& d, const std::vector<std::string>& names) { return with_theta2(d, names); });

    py::class_<ParamSet>(m, "ParamSet")
        .def("checksum", &ParamSet::checksum)
        .def("numel", &ParamSet::numel)
        .def("weight", [](const ParamSet& p, const std::string& name) { return to_numpy(p.at(name).weight); })
        .def("bias", [](const ParamSet& p, const std::string& name) -> py::object {
            const auto& b = p.at(name).bias;
            return b ? py::object(to_numpy(*b)) : py::none();
        });

    py::class_<TangentParams>(m, "TangentParams")
        .def_static("zeros", &TangentParams::zeros)
        .def_static("random", &TangentParams::random)
        .def("numel", &TangentParams::numel)
        .def("dot", &TangentParams::dot)
        .def("norm", &TangentParams::norm)
        .def("flatten", &TangentParams::flatten);

    py::class_<LinearHead>(m, "LinearHead")
        .def_property_readonly("weight", [](const LinearHead& h) { return to_numpy(h.weight); })
        .def_property_readonly("bias", [](const LinearHead& h) { return to_numpy(h.bias); });

    m.def("default_network", [](std::vector<std::size_t> input) { return default_network(input); },
          py::arg("input") = std::vector<std::size_t>{1, 16, 16});
    m.def("build_network", &build_network, py::arg("def"), py::arg("seed"));
    m.def("adopt_ntk", &adopt_ntk);

    m.def("forward_features", [](const NetworkDef& d, const ParamSet& p, const FloatArray& x) {
        const FeatureResult r = forward_features(d, p, to_tensor(x));
        return py::make_tuple(to_numpy(r.features), to_numpy(r.z0));
    });
    m.def("jvp_forward", [](const NetworkDef& d, const ParamSet& p, const TangentParams& w2, const FloatArray& z0) {
        const JvpResult r = jvp_forward(d, p, w2, to_tensor(z0));
        return py::make_tuple(to_numpy(r.features), to_numpy(r.tangent));
    });
    m.def("head_jvp", [](const FloatArray& omega, const FloatArray& jf) {
        return to_numpy(head_jvp(to_tensor(omega), to_tensor(jf)));
    });
    m.def("vjp_theta2", [](const NetworkDef& d, const ParamSet& p, const FloatArray& z0, const FloatArray& u) {
        return vjp_theta2(d, p, to_tensor(z0), to_tensor(u));
    });

    m.def("save_checkpoint", &save_checkpoint);
    m.def("load_checkpoint", &load_checkpoint);

    m.def("gen_synthetic", [](const py::object& spec, std::uint64_t seed) {
        const SyntheticSpec s = spec.is_none() ? SyntheticSpec{} : synthetic_spec_from_json(from_python(spec));
        return dataset_dict(gen_synthetic(s, seed));
    }, py::arg("spec") = py::none(), py::arg("seed") = 0);
    m.def("load_idx", [](const std::filesystem::path& images, const std::filesystem::path& labels) {
        return dataset_dict(load_idx(images, labels));
    });
    m.def("load_cifar_binary", [](const std::filesystem::path& path) { return dataset_dict(load_cifar_binary(path)); });

    m.def("fit_probe", [](const NetworkDef& d, const ParamSet& p, const FloatArray& images, const std::vector<int>& labels,
                          std::size_t num_classes, std::size_t iterations, std::uint64_t seed) {
        TrainConfig cfg = desk_config().probe;
        cfg.iterations = iterations;
        cfg.seed = seed;
        return fit_probe(std::make_shared<const Backbone>(Backbone{d, p}), make_dataset(images, labels, num_classes), cfg);
    }, py::arg("def"), py::arg("params"), py::arg("images"), py::arg("labels"), py::arg("num_classes"),
       py::arg("iterations") = 1000, py::arg("seed") = 0);
    m.def("evaluate", [](const NetworkDef& d, const ParamSet& p, const LinearHead& head, const FloatArray& images,
                         const std::vector<int>& labels, std::size_t num_classes) {
        return evaluate(Backbone{d, p}, head, make_dataset(images, labels, num_classes));
    });
    m.def("full_logits", [](const NetworkDef& d, const ParamSet& p, const LinearHead& w1, const FloatArray& omega,
                            const TangentParams& w2, const FloatArray& x) {
        auto net = std::make_shared<const Backbone>(Backbone{d, p});
        const Tensor om = to_tensor(omega);
        FullModel model = make_model(ModelKind::full, net, net, w1, om, om.dim(1));
        model.w2 = w2;
        return to_numpy(full_logits(model, to_tensor(x)));
    });

    m.def("run_ablation", [](const py::object& config) {
        const auto records = run_ablation(experiment_config_from_json(from_python(config)));
        py::list out;
        for (const auto& r : records) out.append(to_python(to_json(r)));
        return out;
    });
    m.def("desk_config", []() { return to_python(to_json(desk_config())); });

    m.def("verify", [](std::uint64_t seed) {
        const NetworkDef def = default_network();
        auto [nd, np] = adopt_ntk(def, build_network(def, seed));
        const NetworkDef tiny = oracle::tiny_network();
        py::list out;
        for (const auto& r : {oracle::verify_jvp(nd, np, 20, seed),
                              oracle::verify_jacobian(tiny, oracle::tiny_params(tiny, seed), 3, seed),
                              oracle::verify_adjoint(nd, np, 20, seed)})
            out.append(to_python(r.to_json()));
        return out;
    }, py::arg("seed") = 0);
}
