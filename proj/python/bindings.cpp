// Python bindings. Arrays cross the boundary as numpy buffers (copied), so
// the module does not depend on torch's own Python bindings.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "advss/config.hpp"
#include "advss/experiment.hpp"
#include "advss/trainer.hpp"

namespace py = pybind11;
using namespace advss;

namespace {

template <typename T>
using carray = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
torch::Tensor to_tensor(const carray<T>& a, torch::ScalarType dtype) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<T*>(a.data()), shape, dtype).clone();
}

template <typename T>
py::array_t<T> to_numpy(const torch::Tensor& t) {
  auto c = t.contiguous().cpu();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  py::array_t<T> out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<T>(), sizeof(T) * static_cast<std::size_t>(c.numel()));
  return out;
}

py::dict record_dict(const MetricRecord& r) {
  py::dict d;
  d["iter"] = r.iter;
  d["loss_ae"] = r.losses.ae;
  d["loss_d_gan"] = r.losses.d_gan;
  d["loss_d_cls"] = r.losses.d_cls;
  d["loss_g_gan"] = r.losses.g_gan;
  d["loss_g_cls"] = r.losses.g_cls;
  d["alpha"] = r.losses.alpha;
  d["fid"] = r.fid ? py::object(py::float_(*r.fid)) : py::object(py::none());
  return d;
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError({e.what()});
  }
  return experiment_from_json(j);
}

}  // namespace

PYBIND11_MODULE(_advss, m) {
  m.doc() = "Adversarial self-supervised GAN toolkit";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);
  py::register_exception<DatasetError>(m, "DatasetError", PyExc_IOError);

  m.def("default_config", [] { return to_json(ExperimentConfig{}).dump(2); },
        "Default experiment configuration as JSON text.");
  m.def("normalize_config", [](const std::string& text) { return to_json(parse_config(text)).dump(2); },
        py::arg("text"), "Validates a JSON config and returns it with every field filled in.");
  m.def("load_config", [](const std::filesystem::path& p) { return to_json(load_experiment(p)).dump(2); },
        py::arg("path"));

  m.def(
      "rotate",
      [](const carray<float>& image, int k) { return to_numpy<float>(rotate(to_tensor(image, torch::kFloat32), TransformId(k))); },
      py::arg("image"), py::arg("k"), "Rotates an H x W x C image by (k-1) quarter turns counter-clockwise.");
  m.def(
      "make_pseudo_batch",
      [](const carray<float>& batch, int num_transforms, std::uint64_t seed) {
        Rng rng(seed);
        auto t = make_pseudo_batch(to_tensor(batch, torch::kFloat32), num_transforms, rng);
        return py::make_tuple(to_numpy<float>(t.images), to_numpy<int64_t>(t.labels));
      },
      py::arg("batch"), py::arg("num_transforms") = 4, py::arg("seed") = 0);
  m.def(
      "frechet_distance",
      [](const carray<double>& mu1, const carray<double>& sigma1, const carray<double>& mu2, const carray<double>& sigma2) {
        FrechetStats a{to_tensor(mu1, torch::kFloat64), to_tensor(sigma1, torch::kFloat64), 2};
        FrechetStats b{to_tensor(mu2, torch::kFloat64), to_tensor(sigma2, torch::kFloat64), 2};
        return frechet_distance(a, b);
      },
      py::arg("mu1"), py::arg("sigma1"), py::arg("mu2"), py::arg("sigma2"));
  m.def(
      "feature_fid",
      [](const carray<double>& real, const carray<double>& fake) {
        return frechet_distance(gaussian_stats(to_tensor(real, torch::kFloat64)),
                                gaussian_stats(to_tensor(fake, torch::kFloat64)));
      },
      py::arg("real"), py::arg("fake"), "FID between two N x d feature matrices.");
  m.def("smooth", &smooth, py::arg("series"), py::arg("window") = 5);
  m.def(
      "synthetic_blobs",
      [](std::int64_t n, int side, std::uint64_t seed) { return to_numpy<uint8_t>(make_synthetic_blobs(n, side, seed).raw()); },
      py::arg("n"), py::arg("side") = 32, py::arg("seed") = 0);

  m.def(
      "train",
      [](const std::string& config_text, const std::filesystem::path& run_dir) {
        auto config = parse_config(config_text);
        py::gil_scoped_release release;
        return run_experiment(config, run_dir);
      },
      py::arg("config"), py::arg("run_dir"), "Trains one configuration; returns 0, or 2 on divergence.");
  m.def(
      "read_metrics",
      [](const std::filesystem::path& path) {
        py::list out;
        for (const auto& r : read_metric_log(path)) out.append(record_dict(r));
        return out;
      },
      py::arg("path"));
  m.def(
      "sample",
      [](const std::filesystem::path& checkpoint, std::int64_t count, std::uint64_t stream) {
        auto state = load_checkpoint(checkpoint);
        return to_numpy<float>(generate_samples(*state, count, stream));
      },
      py::arg("checkpoint"), py::arg("count") = 16, py::arg("stream") = 0);
  m.def(
      "report",
      [](const std::vector<std::filesystem::path>& dirs, int window) {
        py::list out;
        for (const auto& r : collect_report(dirs, window)) {
          py::dict d;
          d["name"] = r.name;
          d["present"] = r.present;
          d["final_fid"] = r.final_fid ? py::object(py::float_(*r.final_fid)) : py::object(py::none());
          d["final_smoothed_fid"] =
              r.final_smoothed_fid ? py::object(py::float_(*r.final_smoothed_fid)) : py::object(py::none());
          d["iters"] = r.iters;
          d["fids"] = r.fids;
          out.append(d);
        }
        return out;
      },
      py::arg("run_dirs"), py::arg("window") = 5);
}
