#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "ectnet/architectures/accounting.hpp"
#include "ectnet/architectures/checkpoint.hpp"
#include "ectnet/architectures/network.hpp"
#include "ectnet/cli/cli.hpp"
#include "ectnet/data/dataset.hpp"
#include "ectnet/error.hpp"
#include "ectnet/evaluation/evaluation.hpp"

namespace py = pybind11;
using namespace ectnet;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

TensorF to_tensor(const FloatArray& a) {
  if (a.ndim() != 3) throw ShapeError("expected an array of shape (N, L, C)");
  TensorF t({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
             static_cast<std::size_t>(a.shape(2))});
  std::copy(a.data(), a.data() + a.size(), t.data().begin());
  return t;
}

py::array_t<float> to_array(const TensorF& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

// Segments as parallel arrays: samples (S, T, 2) plus label and metadata vectors.
py::dict dataset_to_dict(const Dataset& ds) {
  const std::size_t n = ds.size();
  const std::size_t len = n ? ds.length() : 0;
  py::array_t<float> samples({static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(len), py::ssize_t{2}});
  py::array_t<int> labels(n), volunteer(n), angle(n), direction(n), repeat(n);
  float* dst = samples.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = ds.segments[i];
    std::copy(s.samples.data().begin(), s.samples.data().end(), dst + i * len * 2);
    labels.mutable_at(i) = s.label;
    volunteer.mutable_at(i) = s.meta.volunteer;
    angle.mutable_at(i) = s.meta.angle;
    direction.mutable_at(i) = s.meta.direction;
    repeat.mutable_at(i) = s.meta.repeat;
  }
  py::dict d;
  d["samples"] = samples;
  d["labels"] = labels;
  d["volunteer"] = volunteer;
  d["angle"] = angle;
  d["direction"] = direction;
  d["repeat"] = repeat;
  return d;
}

ScanSegment to_segment(const FloatArray& a) {
  if (a.ndim() != 2 || a.shape(1) != 2) throw ShapeError("expected a segment of shape (T, 2)");
  ScanSegment s;
  s.samples = TensorF({static_cast<std::size_t>(a.shape(0)), 2});
  std::copy(a.data(), a.data() + a.size(), s.samples.data().begin());
  return s;
}

}  // namespace

PYBIND11_MODULE(_ectnet, m) {
  m.doc() = "1D residual CNNs for eddy-current scan classification";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  auto data_error = py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<CheckpointError>(m, "CheckpointError", data_error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  m.attr("__version__") = cli::version();
  m.attr("NUM_CLASSES") = kNumClasses;

  m.def("architecture_names", &architecture_names);
  m.def("class_name", &class_name, py::arg("index"));
  m.def(
      "count_parameters",
      [](const std::string& name, bool include_batchnorm) {
        return count_parameters(build_network<float>(name), ParameterConvention{include_batchnorm});
      },
      py::arg("name"), py::arg("include_batchnorm") = true);
  m.def(
      "count_flops",
      [](const std::string& name, std::size_t length, double flops_per_mac) {
        FlopConvention c;
        c.flops_per_mac = flops_per_mac;
        return count_flops(build_network<float>(name).layer_table(length), c);
      },
      py::arg("name"), py::arg("length") = 224, py::arg("flops_per_mac") = 2.0);

  m.def(
      "synth_generate",
      [](int volunteers, int angles, int directions, int repeats, std::size_t length, double noise,
         std::uint64_t seed, std::vector<int> classes) {
        SynthConfig c;
        c.volunteers = volunteers;
        c.angles = angles;
        c.directions = directions;
        c.repeats = repeats;
        c.length = length;
        c.noise = noise;
        c.seed = seed;
        c.classes = std::move(classes);
        return dataset_to_dict(synth_generate(c));
      },
      py::arg("volunteers") = 2, py::arg("angles") = 1, py::arg("directions") = 2, py::arg("repeats") = 1,
      py::arg("length") = 1250, py::arg("noise") = 0.05, py::arg("seed") = 0,
      py::arg("classes") = std::vector<int>{});
  m.def(
      "load_dataset", [](const std::filesystem::path& p) { return dataset_to_dict(load_dataset(p)); },
      py::arg("path"));

  py::class_<Network<float>>(m, "Network")
      .def(py::init([](const std::string& name, std::optional<std::uint64_t> seed) {
             auto net = build_network<float>(name);
             if (seed) net.initialize(*seed);
             return net;
           }),
           py::arg("name"), py::arg("seed") = py::none())
      .def_static(
          "load", [](const std::filesystem::path& p) { return load_checkpoint<float>(p); }, py::arg("path"))
      .def(
          "save", [](const Network<float>& n, const std::filesystem::path& p) { save_checkpoint(n, p); },
          py::arg("path"))
      .def_property_readonly("name", [](const Network<float>& n) { return n.spec().name; })
      .def("initialize", &Network<float>::initialize, py::arg("seed"))
      .def("count_parameters", [](const Network<float>& n) { return count_parameters(n); })
      .def(
          "infer", [](Network<float>& n, const FloatArray& x) { return to_array(n.infer(to_tensor(x))); },
          py::arg("x"), "Inference-mode logits for x of shape (N, L, 2).")
      .def(
          "predict",
          [](Network<float>& n, const FloatArray& segment, std::size_t n_crops, std::uint64_t seed) {
            Rng rng(seed);
            PredictOptions o;
            o.n_crops = n_crops;
            return predict_crops(n, to_segment(segment), rng, o);
          },
          py::arg("segment"), py::arg("n_crops") = 10, py::arg("seed") = 0,
          "Crop-averaged class probabilities for one segment of shape (T, 2).")
      .def(
          "cam",
          [](Network<float>& n, const FloatArray& segment, int class_index) {
            const CamResult r = compute_cam(n, to_segment(segment), class_index);
            py::dict d;
            d["activation"] = r.activation;
            d["upsampled"] = r.upsampled;
            d["logit"] = r.logit;
            d["bias"] = r.bias;
            d["offset"] = r.offset;
            return d;
          },
          py::arg("segment"), py::arg("class_index"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
