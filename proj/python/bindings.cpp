#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "graspmamba/data_synth.hpp"
#include "graspmamba/error.hpp"
#include "graspmamba/geometry.hpp"
#include "graspmamba/grasp_head.hpp"
#include "graspmamba/harness.hpp"
#include "graspmamba/ssm.hpp"
#include "graspmamba/text_encoder.hpp"

namespace py = pybind11;
using namespace graspmamba;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor::from_data(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::dict maps_dict(const head::GraspMaps& m) {
    py::dict d;
    d["quality"] = to_array(m.quality);
    d["cos2t"] = to_array(m.cos2t);
    d["sin2t"] = to_array(m.sin2t);
    d["width"] = to_array(m.width);
    return d;
}

head::GraspMaps dict_maps(const py::dict& d) {
    return {to_tensor(d["quality"].cast<Array>()), to_tensor(d["cos2t"].cast<Array>()),
            to_tensor(d["sin2t"].cast<Array>()), to_tensor(d["width"].cast<Array>())};
}

py::list grasp_list(const std::vector<head::ScoredGrasp>& grasps) {
    py::list out;
    for (const auto& g : grasps) out.append(py::make_tuple(g.rect, g.quality));
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Language-driven grasp detection with a state-space backbone.";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<LoadError>(m, "LoadError", PyExc_OSError);

    py::class_<GraspRect>(m, "GraspRect")
        .def(py::init<double, double, double, double, double>(), py::arg("x"), py::arg("y"),
             py::arg("w"), py::arg("h"), py::arg("theta"))
        .def_readwrite("x", &GraspRect::x)
        .def_readwrite("y", &GraspRect::y)
        .def_readwrite("w", &GraspRect::w)
        .def_readwrite("h", &GraspRect::h)
        .def_readwrite("theta", &GraspRect::theta)
        .def("__eq__", [](const GraspRect& a, const GraspRect& b) { return a == b; })
        .def("__repr__", [](const GraspRect& g) {
            return py::str("GraspRect(x={}, y={}, w={}, h={}, theta={})")
                .format(g.x, g.y, g.w, g.h, g.theta);
        });

    // SSM core: a, b, c are [D, N], log_delta is [D], sequences are [L, D] or [B, L, D].
    m.def("discretize", [](const Array& a, const Array& b, const Array& log_delta) {
        const Tensor at = to_tensor(a);
        const auto d = ssm::discretize({at, to_tensor(b), Tensor::zeros(at.shape()), to_tensor(log_delta)});
        return py::make_tuple(to_array(d.a_bar), to_array(d.b_bar));
    }, py::arg("a"), py::arg("b"), py::arg("log_delta"));
    m.def("scan", [](const Array& a_bar, const Array& b_bar, const Array& c, const Array& x) {
        return to_array(ssm::scan({to_tensor(a_bar), to_tensor(b_bar)}, to_tensor(c), to_tensor(x)));
    }, py::arg("a_bar"), py::arg("b_bar"), py::arg("c"), py::arg("x"));
    m.def("ssm_kernel", [](const Array& a_bar, const Array& b_bar, const Array& c, long length) {
        return to_array(ssm::ssm_kernel({to_tensor(a_bar), to_tensor(b_bar)}, to_tensor(c), length));
    }, py::arg("a_bar"), py::arg("b_bar"), py::arg("c"), py::arg("length"));
    m.def("conv_apply", [](const Array& x, const Array& k) {
        return to_array(ssm::conv_apply(to_tensor(x), to_tensor(k)));
    }, py::arg("x"), py::arg("kernel"));

    m.def("rotated_iou", &geometry::rotated_iou);
    m.def("angle_offset_deg", &geometry::angle_offset_deg);
    m.def("is_success", &geometry::is_success, py::arg("pred"), py::arg("ground_truth"));
    m.def("harmonic_mean", &geometry::harmonic_mean);

    m.def("encode_targets", [](const std::vector<GraspRect>& grasps, std::size_t height,
                               std::size_t width, double w_max) {
        return maps_dict(head::encode_targets(grasps, height, width, w_max));
    }, py::arg("grasps"), py::arg("height"), py::arg("width"), py::arg("w_max"));
    m.def("decode_grasps", [](const py::dict& maps, int k, double w_max) {
        return grasp_list(head::decode_grasps(dict_maps(maps), k, w_max));
    }, py::arg("maps"), py::arg("k"), py::arg("w_max"));

    m.def("encode_text", [](const std::string& prompt, std::size_t vocab_size, std::size_t dim,
                            std::uint64_t seed) {
        return to_array(text::TextEncoder({vocab_size, dim, seed}).encode(prompt).vector);
    }, py::arg("prompt"), py::arg("vocab_size") = 4096, py::arg("dim") = 64,
       py::arg("seed") = 0x7e57);

    py::class_<data::Sample>(m, "Sample")
        .def_readonly("id", &data::Sample::id)
        .def_property_readonly("image", [](const data::Sample& s) { return to_array(s.image); })
        .def_readonly("prompt", &data::Sample::prompt)
        .def_readonly("category", &data::Sample::category)
        .def_readonly("grasps", &data::Sample::grasps)
        .def_property_readonly("split", [](const data::Sample& s) { return data::split_name(s.split); });

    m.def("generate_dataset", [](std::size_t n, std::uint64_t seed, std::size_t image_size,
                                 double split_ratio) {
        data::SceneConfig cfg;
        cfg.image_size = image_size;
        cfg.split_ratio = split_ratio;
        return data::generate_dataset(n, seed, cfg);
    }, py::arg("n"), py::arg("seed"), py::arg("image_size") = 224, py::arg("split_ratio") = 0.7);
    m.def("save_dataset", &data::save_dataset, py::arg("samples"), py::arg("directory"));
    m.def("load_dataset", &data::load_dataset, py::arg("directory"));

    py::class_<GraspModel>(m, "Model")
        .def_property_readonly("config", [](const GraspModel& g) { return g.config.to_json(); })
        .def("parameter_count", &GraspModel::parameter_count)
        .def("save", [](GraspModel& g, const std::filesystem::path& p) { harness::save_checkpoint(g, p); })
        .def("predict_maps", [](const GraspModel& g, const Array& images, const std::vector<std::string>& prompts) {
            NoGradGuard no_grad;
            return maps_dict(g.forward(to_tensor(images), prompts));
        }, py::arg("images"), py::arg("prompts"))
        .def("infer", [](const GraspModel& g, const Array& image, const std::string& prompt, int k) {
            const auto r = harness::infer(g, to_tensor(image), prompt, k);
            py::array_t<std::uint8_t> heat({static_cast<py::ssize_t>(r.heatmap.height),
                                            static_cast<py::ssize_t>(r.heatmap.width), py::ssize_t{3}});
            std::copy(r.heatmap.pixels.begin(), r.heatmap.pixels.end(), heat.mutable_data());
            return py::make_tuple(grasp_list(r.grasps), heat);
        }, py::arg("image"), py::arg("prompt"), py::arg("k") = 1);

    m.def("make_model", [](const std::string& config_json) {
        return make_model(ModelConfig::from_json(config_json));
    }, py::arg("config_json") = "{}");
    m.def("load_checkpoint", &harness::load_checkpoint, py::arg("path"));
    m.def("train", [](const std::string& config_json, const std::vector<data::Sample>& samples) {
        auto r = harness::train(harness::TrainConfig::from_json(config_json), samples);
        return py::make_tuple(std::move(r.model), r.epoch_loss);
    }, py::arg("config_json"), py::arg("samples"));
    m.def("evaluate", [](const GraspModel& g, const std::vector<data::Sample>& samples) {
        const auto r = harness::evaluate_model(g, samples);
        py::dict d;
        d["seen"] = r.seen_rate;
        d["unseen"] = r.unseen_rate;
        d["h"] = r.h;
        d["n_seen"] = r.n_seen;
        d["n_unseen"] = r.n_unseen;
        return d;
    });
    m.def("benchmark_scan", [](const std::vector<long>& lengths, const std::vector<std::string>& modes,
                               int repeats) {
        std::vector<harness::BenchMode> ms;
        for (const auto& s : modes) ms.push_back(harness::parse_bench_mode(s));
        harness::BenchOptions o;
        o.repeats = repeats;
        py::list out;
        for (const auto& r : harness::benchmark_scan(lengths, ms, o))
            out.append(py::make_tuple(harness::bench_mode_name(r.mode), r.length, r.seconds));
        return out;
    }, py::arg("lengths"), py::arg("modes"), py::arg("repeats") = 5);
}
