// Thin numpy-facing wrapper. Arrays are copied in and out; float32 model only.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "resunetpp/densecrf.hpp"
#include "resunetpp/metrics.hpp"
#include "resunetpp/model.hpp"
#include "resunetpp/tta.hpp"

namespace py = pybind11;
using namespace resunetpp;

namespace {

template <typename T>
Tensor<T> to_tensor(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<T>(shape, std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const Tensor<T>& t) {
  py::array_t<T> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// uint8 HxWx3 -> RgbImage
RgbImage to_rgb(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw ShapeError("image must be HxWx3 uint8");
  RgbImage img;
  img.height = a.shape(0);
  img.width = a.shape(1);
  img.rgb.assign(a.data(), a.data() + a.size());
  return img;
}

std::vector<std::uint8_t> to_mask(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

TtaConfig tta_config(const std::vector<std::string>& names) {
  TtaConfig c;
  if (names.empty()) return c;
  c.variants.clear();
  for (const auto& n : names) c.variants.push_back(parse_tta_variant(n));
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DatasetError>(m, "DatasetError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<StateError>(m, "StateError", PyExc_RuntimeError);

  m.attr("REFERENCE_PARAMETERS") = kReferenceParameterCount;

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("filters", &ModelConfig::filters)
      .def_readwrite("input_channels", &ModelConfig::input_channels)
      .def_readwrite("output_channels", &ModelConfig::output_channels)
      .def_readwrite("se_reduction", &ModelConfig::se_reduction)
      .def_readwrite("aspp_rates", &ModelConfig::aspp_rates)
      .def_readwrite("skip_before_se", &ModelConfig::skip_before_se);

  py::class_<ResUNetPP<float>>(m, "Model")
      .def(py::init<ModelConfig, std::uint64_t>(), py::arg("config") = ModelConfig{}, py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) { return load_weights<float>(path); })
      .def("save", [](ResUNetPP<float>& model, const std::string& path,
                      const Metadata& meta) { save_weights(model, path, meta); },
           py::arg("path"), py::arg("metadata") = Metadata{})
      .def("count_parameters", &ResUNetPP<float>::count_parameters)
      .def("summary", [](ResUNetPP<float>& model) { return model.summary().to_text(); })
      .def("forward",
           [](ResUNetPP<float>& model, const py::array_t<float, py::array::c_style | py::array::forcecast>& x,
              bool train) {
             auto input = to_tensor<float>(x);
             Tensor<float> out;
             {
               py::gil_scoped_release release;
               NoGradScope<float> no_grad;
               out = model.forward(input, train ? Mode::Train : Mode::Eval);
             }
             return to_array(out);
           },
           py::arg("x"), py::arg("train") = false,
           "Forward pass without gradients. train=True uses batch statistics and updates running ones.")
      .def("predict",
           [](ResUNetPP<float>& model, const py::array_t<float, py::array::c_style | py::array::forcecast>& x,
              const std::vector<std::string>& tta) {
             auto input = to_tensor<float>(x);
             Tensor<float> out;
             {
               py::gil_scoped_release release;
               NoGradScope<float> no_grad;
               out = tta.empty() ? model.forward(input, Mode::Eval)
                                 : tta_predict(model, input, tta_config(tta), Mode::Eval);
             }
             return to_array(out);
           },
           py::arg("x"), py::arg("tta") = std::vector<std::string>{},
           "Probability map [N,1,H,W] for images [N,3,H,W]; H, W divisible by 8.");

  m.def("read_weight_metadata", [](const std::string& path) { return read_weight_metadata(path); });

  py::class_<CrfParams>(m, "CrfParams")
      .def(py::init<>())
      .def_readwrite("iterations", &CrfParams::iterations)
      .def_readwrite("w_smooth", &CrfParams::w_smooth)
      .def_readwrite("w_bilateral", &CrfParams::w_bilateral)
      .def_readwrite("theta_gamma", &CrfParams::theta_gamma)
      .def_readwrite("theta_alpha", &CrfParams::theta_alpha)
      .def_readwrite("theta_beta", &CrfParams::theta_beta)
      .def_readwrite("max_exact_pixels", &CrfParams::max_exact_pixels)
      .def_readwrite("truncate", &CrfParams::truncate)
      .def_readwrite("window_radius", &CrfParams::window_radius);

  m.def("crf_refine",
        [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& image,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& prob, const CrfParams& params) {
          if (prob.ndim() != 2) throw ShapeError("prob must be HxW");
          const auto rgb = to_rgb(image);
          Tensor<double> p(Shape{1, 1, prob.shape(0), prob.shape(1)},
                           std::vector<double>(prob.data(), prob.data() + prob.size()));
          Tensor<double> q = meanfield_refine(rgb, p, params);
          py::array_t<double> out({prob.shape(0), prob.shape(1)});
          std::copy(q.data().begin(), q.data().end(), out.mutable_data());
          return out;
        },
        py::arg("image"), py::arg("prob"), py::arg("params") = CrfParams{},
        "Mean-field refinement of an HxW foreground probability map given an HxWx3 uint8 image.");

  m.def("dsc", [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& pred,
                  const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& gt) {
    return dsc(confusion(to_mask(pred), to_mask(gt)));
  });
  m.def("iou", [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& pred,
                  const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& gt) {
    return iou(confusion(to_mask(pred), to_mask(gt)));
  });
  m.def("roc_auc", [](const py::array_t<double, py::array::c_style | py::array::forcecast>& scores,
                      const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& labels) {
    return roc_auc(std::span<const double>(scores.data(), scores.size()), to_mask(labels));
  });
}
