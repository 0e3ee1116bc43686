// Copyright 2026 The CMTA Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>

#include "cmta/checkpoint.hpp"
#include "cmta/errors.hpp"
#include "cmta/gradcheck.hpp"
#include "cmta/metrics.hpp"
#include "cmta/synth.hpp"
#include "cmta/train.hpp"

namespace py = pybind11;
using namespace cmta;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

/// Events from parallel t, x, y, p arrays.
EventStream make_stream(const Array& t, const py::array_t<std::int32_t>& x, const py::array_t<std::int32_t>& y,
                        const py::array_t<std::int8_t>& p, double t_start, double t_end, int height, int width) {
  const auto n = t.size();
  if (x.size() != n || y.size() != n || p.size() != n) throw ShapeError("t, x, y and p must have equal length");
  EventStream s;
  s.window = {t_start, t_end, 0};
  s.height = height;
  s.width = width;
  for (py::ssize_t i = 0; i < n; ++i) s.events.push_back({t.data()[i], x.data()[i], y.data()[i], p.data()[i]});
  return s;
}

py::dict stream_dict(const EventStream& s) {
  const auto n = static_cast<py::ssize_t>(s.events.size());
  Array t(n);
  py::array_t<std::int32_t> x(n), y(n);
  py::array_t<std::int8_t> p(n);
  for (py::ssize_t i = 0; i < n; ++i) {
    const auto& e = s.events[static_cast<std::size_t>(i)];
    t.mutable_data()[i] = e.t;
    x.mutable_data()[i] = e.x;
    y.mutable_data()[i] = e.y;
    p.mutable_data()[i] = e.p;
  }
  py::dict d;
  d["t"] = t;
  d["x"] = x;
  d["y"] = y;
  d["p"] = p;
  d["t_start"] = s.window.t_start;
  d["t_end"] = s.window.t_end;
  d["height"] = s.height;
  d["width"] = s.width;
  return d;
}

py::dict report_dict(const MetricsReport& r) {
  py::list rows;
  for (const auto& row : r.rows) {
    py::dict d;
    d["id"] = row.id;
    d["psnr"] = row.psnr;
    d["ssim"] = row.ssim;
    d["blur_psnr"] = row.blur_psnr;
    d["blur_ssim"] = row.blur_ssim;
    rows.append(d);
  }
  py::dict out;
  out["rows"] = rows;
  out["mean_psnr"] = r.mean_psnr;
  out["mean_ssim"] = r.mean_ssim;
  out["mean_blur_psnr"] = r.mean_blur_psnr;
  out["mean_blur_ssim"] = r.mean_blur_ssim;
  out["text"] = r.format();
  return out;
}

}  // namespace

PYBIND11_MODULE(_cmta, m) {
  m.doc() = "Event-guided multi-frame video deblurring";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<DivisibilityError>(m, "DivisibilityError", PyExc_ValueError);
  py::register_exception<InvalidWindowError>(m, "InvalidWindowError", PyExc_ValueError);
  py::register_exception<BoundsError>(m, "BoundsError", PyExc_IndexError);
  py::register_exception<RangeError>(m, "RangeError", PyExc_IndexError);
  py::register_exception<StateError>(m, "StateError", PyExc_RuntimeError);
  py::register_exception<OrderingError>(m, "OrderingError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);

  py::class_<CMTAConfig>(m, "Config")
      .def(py::init<>())
      .def_readwrite("P", &CMTAConfig::P)
      .def_readwrite("voxel_bins", &CMTAConfig::voxel_bins)
      .def_readwrite("crife_iterations", &CMTAConfig::crife_iterations)
      .def_readwrite("base_channels", &CMTAConfig::base_channels)
      .def_readwrite("scales", &CMTAConfig::scales)
      .def_readwrite("dynamic_kernel", &CMTAConfig::dynamic_kernel)
      .def_readwrite("event_channels", &CMTAConfig::event_channels)
      .def_readwrite("enable_crife", &CMTAConfig::enable_crife)
      .def_readwrite("enable_ecitfa", &CMTAConfig::enable_ecitfa)
      .def_readwrite("normalize_attention", &CMTAConfig::normalize_attention)
      .def_readwrite("init_seed", &CMTAConfig::init_seed)
      .def("validate", &CMTAConfig::validate)
      .def("__repr__", [](const CMTAConfig& c) { return format_config(c); });

  m.def("param_count", [](const CMTAConfig& c) { return param_count(c); });

  m.def(
      "voxel_grid",
      [](const Array& t, const py::array_t<std::int32_t>& x, const py::array_t<std::int32_t>& y,
         const py::array_t<std::int8_t>& p, double t_start, double t_end, int bins, int height, int width,
         bool normalize) {
        const auto s = make_stream(t, x, y, p, t_start, t_end, height, width);
        return to_array(build_voxel_grid(s, bins, height, width, {normalize}).data);
      },
      py::arg("t"), py::arg("x"), py::arg("y"), py::arg("p"), py::arg("t_start"), py::arg("t_end"), py::arg("bins"),
      py::arg("height"), py::arg("width"), py::arg("normalize") = false, "bins x H x W voxel grid");
  m.def(
      "partition",
      [](const Array& grid, int n) {
        py::list out;
        for (const auto& t : partition_voxel_grid(VoxelGrid{to_tensor(grid)}, n)) out.append(to_array(t));
        return out;
      },
      py::arg("grid"), py::arg("n"));

  m.def("read_events", [](const std::filesystem::path& p) { return stream_dict(read_events(p)); });
  m.def(
      "write_events",
      [](const std::filesystem::path& path, const Array& t, const py::array_t<std::int32_t>& x,
         const py::array_t<std::int32_t>& y, const py::array_t<std::int8_t>& p, double t_start, double t_end,
         int height, int width) { write_events(make_stream(t, x, y, p, t_start, t_end, height, width), path); },
      py::arg("path"), py::arg("t"), py::arg("x"), py::arg("y"), py::arg("p"), py::arg("t_start"), py::arg("t_end"),
      py::arg("height"), py::arg("width"));

  m.def(
      "synthesize_blur",
      [](const std::vector<Array>& frames, bool gamma) {
        std::vector<Tensor> ts;
        for (const auto& f : frames) ts.push_back(to_tensor(f));
        return to_array(synthesize_blur(ts, gamma));
      },
      py::arg("frames"), py::arg("gamma") = false);
  m.def(
      "simulate_events",
      [](const std::vector<Array>& frames, double fps, double t_start, double t_end, double mu, double sigma,
         std::uint64_t seed) {
        SharpSequence seq;
        seq.fps = fps;
        for (const auto& f : frames) seq.frames.push_back(to_tensor(f));
        const int h = static_cast<int>(seq.frames.at(0).height()), w = static_cast<int>(seq.frames.at(0).width());
        return stream_dict(simulate_events(seq, sample_threshold_field(h, w, mu, sigma, seed), {t_start, t_end, 0}));
      },
      py::arg("frames"), py::arg("fps"), py::arg("t_start"), py::arg("t_end"), py::arg("threshold_mu") = 0.2,
      py::arg("threshold_sigma") = 0.03, py::arg("seed") = 0);
  m.def(
      "render_demo",
      [](const std::filesystem::path& dir, int size, int frames, std::uint64_t seed) {
        write_sharp_sequence(render_moving_texture(size, size, frames, seed), dir);
      },
      py::arg("dir"), py::arg("size") = 48, py::arg("frames") = 35, py::arg("seed") = 0);
  m.def(
      "build_dataset",
      [](const std::filesystem::path& sharp_dir, const std::filesystem::path& out, int P, int window, int stride,
         std::uint64_t seed) {
        SynthOptions o;
        o.P = P;
        o.window = window;
        o.stride = stride > 0 ? stride : window;
        o.seed = seed;
        return static_cast<int>(build_dataset(sharp_dir, out, o).samples.size());
      },
      py::arg("sharp_dir"), py::arg("out"), py::arg("P") = 2, py::arg("window") = 7, py::arg("stride") = 0,
      py::arg("seed") = 0, "Returns the number of samples written");

  m.def("psnr", [](const Array& a, const Array& b) { return psnr(to_tensor(a), to_tensor(b)); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_tensor(a), to_tensor(b)); });

  m.def(
      "train",
      [](const std::filesystem::path& data, int steps, const std::filesystem::path& out,
         const std::optional<std::filesystem::path>& config) {
        const auto cfg = config ? read_config(*config) : ConfigFile{};
        CmtaModel model(cfg.model);
        TrainOptions opt;
        opt.steps = steps;
        opt.settings = cfg.train;
        opt.checkpoint_path = out;
        const auto samples = load_dataset(data);
        py::gil_scoped_release release;
        return train(model, samples, opt).losses;
      },
      py::arg("data"), py::arg("steps"), py::arg("out"), py::arg("config") = py::none(), "Returns per-step losses");
  m.def(
      "evaluate",
      [](const std::filesystem::path& ckpt, const std::filesystem::path& data) {
        const auto model = model_from_checkpoint(load_checkpoint(ckpt));
        return report_dict(evaluate(model, load_dataset(data)));
      },
      py::arg("ckpt"), py::arg("data"));
  m.def(
      "infer",
      [](const std::filesystem::path& ckpt, const std::filesystem::path& sample_dir) {
        const auto model = model_from_checkpoint(load_checkpoint(ckpt));
        return to_array(infer(model, load_sample_dir(sample_dir, model.config().P)));
      },
      py::arg("ckpt"), py::arg("sample_dir"), "3 x H x W deblurred middle frame");
  m.def(
      "gradient_check",
      [](const std::string& block, int size, double eps, std::uint64_t seed) {
        return gradient_check_block(block, size, eps, seed).max_rel_error;
      },
      py::arg("block"), py::arg("size") = 4, py::arg("eps") = 1e-5, py::arg("seed") = 0,
      "Largest relative error between analytic and finite-difference gradients");
  m.def("gradcheck_blocks", &gradcheck_blocks);
}
