/* Copyright 2026 The adabit Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "adabit/calibration.hpp"
#include "adabit/config.hpp"
#include "adabit/error.hpp"
#include "adabit/metrics.hpp"
#include "adabit/pipeline.hpp"
#include "adabit/quantizer.hpp"

namespace py = pybind11;
using namespace adabit;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

// Accepts (H, W), (C, H, W) or (N, C, H, W).
Tensor to_tensor(const Array& a) {
  Shape s;
  switch (a.ndim()) {
    case 2: s = {1, 1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1))}; break;
    case 3: s = {1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))}; break;
    case 4:
      s = {static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
           static_cast<int>(a.shape(3))};
      break;
    default: throw Error(ErrorKind::kShape, "expected a 2-, 3- or 4-d array");
  }
  return Tensor(s, std::vector<float>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  const Shape s = t.shape();
  Array out({s.n, s.c, s.h, s.w});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

RunConfig config_from(const std::string& text) {
  RunConfig c = parse_config(text);
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Adaptive bit-mapping quantization of a toy super-resolution network";

  static py::exception<Error> error(m, "AdabitError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error.ptr(), e.what());
    }
  });

  m.def("version", &version_string);
  m.def("default_config", [] { return to_ini(RunConfig{}); }, "Canonical INI text of the defaults");
  m.def("normalize_config", [](const std::string& text) { return to_ini(config_from(text)); },
        "Parses, validates and re-emits INI text");

  m.def("quantize_act", [](const Array& x, float lower, float upper, int bits) {
    return to_array(quantize_act(to_tensor(x), ActQuant{lower, upper}, BitValue{static_cast<float>(bits)}));
  }, py::arg("x"), py::arg("lower"), py::arg("upper"), py::arg("bits"));
  m.def("quantize_wgt", [](const Array& w, float bound, int bits) {
    return to_array(quantize_wgt(to_tensor(w), WgtQuant{bound}, BitValue{static_cast<float>(bits)}));
  }, py::arg("w"), py::arg("bound"), py::arg("bits"));
  m.def("omse_weight_range", [](const Array& w, int bits) {
    return omse_weight_range(std::span<const float>(w.data(), static_cast<std::size_t>(w.size())),
                             BitValue{static_cast<float>(bits)});
  }, py::arg("w"), py::arg("bits"), "Any shape; the sweep runs over all values");
  m.def("bit_aware_clip", [](const Array& x, float lower, float upper, int bits) {
    return bit_aware_clip(std::span<const float>(x.data(), static_cast<std::size_t>(x.size())), lower, upper,
                          BitValue{static_cast<float>(bits)});
  }, py::arg("x"), py::arg("lower"), py::arg("upper"), py::arg("bits"));

  m.def("complexity", [](const Array& img) { return complexity(to_tensor(img)).value; });
  m.def("psnr", [](const Array& a, const Array& b) { return psnr(to_tensor(a), to_tensor(b)); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_tensor(a), to_tensor(b)); });
  m.def("spearman", [](const std::vector<double>& x, const std::vector<double>& y) { return spearman(x, y); });

  m.def("synth_pool", [](std::size_t count, int height, int width, std::uint64_t seed) {
    std::vector<Array> out;
    for (const auto& t : synth_pool(count, height, width, seed)) out.push_back(to_array(t));
    return out;
  }, py::arg("count"), py::arg("height"), py::arg("width"), py::arg("seed"));
  m.def("extract_patches", [](const Array& img, int patch) {
    std::vector<Array> out;
    for (const auto& t : extract_patches(to_tensor(img), patch)) out.push_back(to_array(t));
    return out;
  }, py::arg("image"), py::arg("patch") = 96);
  m.def("load_png", [](const std::filesystem::path& p) { return to_array(load_png(p)); });
  m.def("save_png", [](const Array& img, const std::filesystem::path& p) { save_png(to_tensor(img), p); });

  py::class_<SrNetwork>(m, "Network")
      .def_property_readonly("num_blocks", [](const SrNetwork& n) { return n.config().num_blocks; })
      .def_property_readonly("channels", [](const SrNetwork& n) { return n.config().channels; })
      .def_property_readonly("scale", [](const SrNetwork& n) { return n.config().scale; })
      .def_property_readonly("b_base", [](const SrNetwork& n) { return n.config().b_base; })
      .def_property_readonly("num_quantized", &SrNetwork::num_quantized)
      .def_property_readonly("quantized", &SrNetwork::has_quant)
      .def("layer_names", [](const SrNetwork& n) {
        std::vector<std::string> names;
        for (const auto& c : n.convs()) names.push_back(c.name);
        return names;
      })
      .def("super_resolve", [](const SrNetwork& n, const Array& lr, int tile) {
        return to_array(super_resolve(n, to_tensor(lr), tile));
      }, py::arg("lr"), py::arg("tile") = 96)
      .def("save", [](const SrNetwork& n, const std::filesystem::path& p) { save_checkpoint(n, p); })
      .def("to_bytes", [](const SrNetwork& n) {
        const auto b = serialize_checkpoint(n);
        return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
      });

  m.def("load_checkpoint", [](const std::filesystem::path& p) { return load_checkpoint(p); });
  m.def("pretrain", [](const std::string& text) {
    py::gil_scoped_release release;
    return pretrain_network(config_from(text));
  }, py::arg("config") = "", "Pretrains the floating-point network described by INI text");
  m.def("quantize", [](const SrNetwork& fp, const std::string& text) {
    py::gil_scoped_release release;
    const RunConfig c = config_from(text);
    return quantize_network(fp, build_calib_set(c), c).net;
  }, py::arg("fp"), py::arg("config") = "", "Calibrates (and for fine-tuned modes fine-tunes) a copy of fp");
  m.def("evaluate", [](const SrNetwork& net, const std::string& text) {
    const RunConfig c = config_from(text);
    const auto rows = evaluate(net, load_test_set(c, c.data.test_dir), c.data.eval_patch);
    py::list out;
    for (const auto& r : rows) {
      py::dict d;
      d["image"] = r.image;
      d["complexity"] = r.complexity;
      d["b_I"] = r.image_factor;
      d["FAB"] = r.fab;
      d["PSNR"] = r.psnr;
      d["SSIM"] = r.ssim;
      out.append(d);
    }
    return out;
  }, py::arg("net"), py::arg("config") = "", "Per-image rows on the configured test set");
}
