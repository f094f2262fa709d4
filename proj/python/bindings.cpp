#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fairfader/data.hpp"
#include "fairfader/eval.hpp"
#include "fairfader/gradcheck.hpp"
#include "fairfader/nets.hpp"
#include "fairfader/train.hpp"

namespace py = pybind11;
using namespace fairfader;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

TensorPtr tensor_from_array(const FloatArray& arr) {
  Shape shape;
  for (py::ssize_t d = 0; d < arr.ndim(); ++d) shape.push_back((int64_t)arr.shape(d));
  std::vector<float> values(arr.data(), arr.data() + arr.size());
  return make_tensor<float>(std::move(shape), std::move(values));
}

py::array_t<float> array_from_tensor(const TensorPtr& t) {
  std::vector<py::ssize_t> shape(t->shape.begin(), t->shape.end());
  py::array_t<float> arr(shape);
  std::copy(t->values.begin(), t->values.end(), arr.mutable_data());
  return arr;
}

struct PyEncoder {
  EncoderModel model;

  py::array_t<float> encode_array(const FloatArray& x) {
    auto t = tensor_from_array(x);
    return array_from_tensor(encode(model, t, Mode::Eval, nullptr));
  }
  void save(const std::string& path) { save_model(model, path); }
};

}  // namespace

PYBIND11_MODULE(_fairfader, m) {
  m.doc() = "Attribute-invariant representation learning core";
  m.attr("__version__") = "0.1.0";

  m.def("accuracy_variance", &accuracy_variance, py::arg("per_class"),
        "Unbiased sample variance of per-class accuracies");
  m.def("class_weights", &class_weights, py::arg("freqs"),
        "Inverse-frequency class weights normalized to mean 1");
  m.def(
      "stratified_accuracy",
      [](const std::vector<int>& pred, const std::vector<int>& truth, const std::vector<int>& race,
         int num_classes) {
        if (pred.size() != truth.size() || pred.size() != race.size())
          throw std::invalid_argument("stratified_accuracy: length mismatch");
        std::vector<PredictionRecord> rs;
        for (size_t i = 0; i < pred.size(); ++i)
          rs.push_back(PredictionRecord{std::to_string(i), pred[i], truth[i], race[i]});
        return stratified_accuracy(rs, num_classes);
      },
      py::arg("pred"), py::arg("truth"), py::arg("race"), py::arg("num_classes"),
      "Per-class percent correct and pooled percent correct");

  m.def(
      "conv2d",
      [](const FloatArray& x, const FloatArray& w, const FloatArray& b, int stride, int pad) {
        return array_from_tensor(
            conv2d<float>(nullptr, tensor_from_array(x), tensor_from_array(w),
                          tensor_from_array(b), stride, pad));
      },
      py::arg("input"), py::arg("weight"), py::arg("bias"), py::arg("stride"), py::arg("pad"));
  m.def(
      "deconv2d",
      [](const FloatArray& x, const FloatArray& w, const FloatArray& b, int stride, int pad) {
        return array_from_tensor(
            deconv2d<float>(nullptr, tensor_from_array(x), tensor_from_array(w),
                            tensor_from_array(b), stride, pad));
      },
      py::arg("input"), py::arg("weight"), py::arg("bias"), py::arg("stride"), py::arg("pad"));
  m.def(
      "attr_planes",
      [](int y, int K, int64_t H, int64_t W) { return array_from_tensor(attr_planes(y, K, H, W)); },
      py::arg("y"), py::arg("num_attrs"), py::arg("height"), py::arg("width"),
      "One-hot constant planes for the decoder conditioning");

  m.def(
      "parse_utk_filename",
      [](const std::string& name) {
        auto a = parse_utk_filename(name);
        return py::make_tuple(a.age, a.gender, a.race);
      },
      py::arg("name"));

  py::class_<ArchSpec>(m, "ArchSpec")
      .def(py::init<>())
      .def_readwrite("input_channels", &ArchSpec::input_channels)
      .def_readwrite("input_size", &ArchSpec::input_size)
      .def_readwrite("depth", &ArchSpec::depth)
      .def_readwrite("base_channels", &ArchSpec::base_channels)
      .def_readwrite("num_attrs", &ArchSpec::num_attrs)
      .def_readwrite("latent_channels", &ArchSpec::latent_channels)
      .def("validate", &ArchSpec::validate)
      .def("latent_extent", &ArchSpec::latent_extent)
      .def("encoder_channels", &ArchSpec::encoder_channels)
      .def("classifier_channels", &ArchSpec::classifier_channels);

  py::class_<PyEncoder>(m, "Encoder")
      .def("encode", &PyEncoder::encode_array, py::arg("x"))
      .def("save", &PyEncoder::save, py::arg("path"))
      .def_property_readonly("spec", [](const PyEncoder& e) { return e.model.spec; });
  m.def(
      "build_encoder",
      [](const ArchSpec& spec, uint64_t seed) {
        std::mt19937 rng((uint32_t)seed);
        return PyEncoder{build_encoder(spec, rng)};
      },
      py::arg("spec"), py::arg("seed"));
  m.def(
      "load_encoder", [](const std::string& path) { return PyEncoder{load_encoder(path)}; },
      py::arg("path"));

  m.def(
      "gen_synthetic",
      [](int n_samples, int image_size, const std::vector<double>& fractions, double rho,
         double noise_std, uint64_t seed) {
        SynthConfig cfg;
        cfg.n_samples = n_samples;
        cfg.image_size = image_size;
        cfg.num_classes = (int)fractions.size();
        cfg.class_fractions = fractions;
        cfg.nuisance_correlation = rho;
        cfg.noise_std = noise_std;
        cfg.seed = seed;
        auto records = gen_synthetic(cfg);
        std::vector<py::ssize_t> shape = {(py::ssize_t)records.size(), 1, image_size, image_size};
        py::array_t<float> images(shape);
        std::vector<int> gender, race;
        float* dst = images.mutable_data();
        for (const auto& r : records) {
          std::copy(r.image->values.begin(), r.image->values.end(), dst);
          dst += r.image->numel();
          gender.push_back(r.gender);
          race.push_back(r.race);
        }
        return py::make_tuple(images, gender, race);
      },
      py::arg("n_samples"), py::arg("image_size"), py::arg("class_fractions"), py::arg("rho"),
      py::arg("noise_std"), py::arg("seed"));

  m.def(
      "gradcheck_suite",
      [](uint64_t seed, int instances) {
        py::list out;
        for (const auto& r : run_gradcheck_suite(seed, instances)) {
          py::dict d;
          d["op"] = r.op;
          d["max_rel_err"] = r.max_rel_err;
          d["tol"] = r.tol;
          d["pass"] = r.pass;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 7, py::arg("instances") = 5);
}
