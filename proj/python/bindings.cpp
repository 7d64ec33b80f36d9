#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "slicegen/body_composition.hpp"
#include "slicegen/checkpoint.hpp"
#include "slicegen/metrics.hpp"
#include "slicegen/pipeline.hpp"
#include "slicegen/slice_select.hpp"

namespace py = pybind11;
using namespace slicegen;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Image to_image(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array");
  const auto* p = a.data();
  return Image(std::size_t(a.shape(0)), std::size_t(a.shape(1)), std::vector<float>(p, p + a.size()));
}

Array to_array(const Image& im) {
  Array out({im.rows(), im.cols()});
  std::copy(im.pixels().begin(), im.pixels().end(), out.mutable_data());
  return out;
}

py::array_t<bool> to_array(const Mask& m) {
  py::array_t<bool> out({m.rows(), m.cols()});
  bool* dst = out.mutable_data();
  for (std::size_t i = 0; i < m.size(); ++i) dst[i] = m[i];
  return out;
}

}  // namespace

PYBIND11_MODULE(_slicegen, m) {
  m.doc() = "Conditional slice generation on synthetic abdominal phantoms";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_OSError);
  py::register_exception<LoadError>(m, "LoadError", PyExc_OSError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", PyExc_ValueError);
  py::register_exception<InfinitePsnrError>(m, "InfinitePsnrError", PyExc_ArithmeticError);

  py::class_<SubjectProfile>(m, "SubjectProfile")
      .def(py::init<>())
      .def_readwrite("subject_id", &SubjectProfile::subject_id)
      .def_readwrite("habitus_scale", &SubjectProfile::habitus_scale)
      .def_readwrite("fat_thickness", &SubjectProfile::fat_thickness)
      .def_readwrite("organ_phase", &SubjectProfile::organ_phase)
      .def_readwrite("intensity_jitter_seed", &SubjectProfile::intensity_jitter_seed);

  m.def("make_profile", &make_profile, py::arg("subject_id"), py::arg("cohort_seed") = 0);
  m.def("level_grid", &level_grid, py::arg("n_levels"));
  m.def(
      "render_slice",
      [](const SubjectProfile& p, double level, std::size_t image_size, double pixel_area) {
        const PhantomSlice s = render_slice(p, level, {image_size, pixel_area});
        py::dict d;
        d["image"] = to_array(s.image);
        d["body"] = to_array(s.body);
        d["inner_wall"] = to_array(s.inner_wall);
        d["muscle"] = to_array(s.muscle);
        d["adipose"] = to_array(s.adipose);
        d["visceral_fat"] = to_array(s.visceral_fat());
        return d;
      },
      py::arg("profile"), py::arg("level"), py::arg("image_size") = 32, py::arg("pixel_area") = 4.0);

  m.def(
      "ssim", [](const Array& x, const Array& y) { return ssim(to_image(x), to_image(y)); }, py::arg("x"),
      py::arg("y"));
  m.def(
      "psnr", [](const Array& x, const Array& y, double max_value) { return psnr(to_image(x), to_image(y), max_value); },
      py::arg("x"), py::arg("y"), py::arg("max_value") = 1.0);
  m.def(
      "mutual_information",
      [](const Array& a, const Array& b, std::size_t bins) { return mutual_information(to_image(a), to_image(b), bins); },
      py::arg("a"), py::arg("b"), py::arg("bins") = 16);
  m.def(
      "registered_mutual_information",
      [](const Array& a, const Array& b, std::size_t bins) {
        return registered_mutual_information(to_image(a), to_image(b), bins);
      },
      py::arg("candidate"), py::arg("reference"), py::arg("bins") = 16);

  m.def(
      "fcm_cluster",
      [](const std::vector<double>& pixels, std::size_t c, double fuzzifier, std::uint64_t seed) {
        FcmConfig cfg;
        cfg.c = c;
        cfg.m = fuzzifier;
        cfg.seed = seed;
        const Membership mem = fcm_cluster(pixels, cfg);
        py::array_t<double> u({mem.n, mem.c});
        std::copy(mem.u.begin(), mem.u.end(), u.mutable_data());
        py::dict d;
        d["u"] = u;
        d["centroids"] = mem.centroids;
        d["objective"] = mem.objective;
        d["converged"] = mem.converged;
        return d;
      },
      py::arg("pixels"), py::arg("c") = 3, py::arg("m") = 2.0, py::arg("seed") = 0);

  py::class_<CSliceGen<float>>(m, "Model")
      .def_property_readonly("latent_dim", [](const CSliceGen<float>& g) { return g.config().latent_dim; })
      .def_property_readonly("image_size", [](const CSliceGen<float>& g) { return g.config().image_size; })
      .def(
          "generate",
          [](const CSliceGen<float>& g, const Array& conditional, std::uint64_t seed) {
            Rng rng(seed);
            const std::vector<Image> in{to_image(conditional)};
            return to_array(generate(g, std::span<const Image>(in), rng).front());
          },
          py::arg("conditional"), py::arg("seed") = 0);

  m.def(
      "load_model", [](const std::filesystem::path& p) { return load_model(load_checkpoint(p)); }, py::arg("path"));
  m.def("checkpoint_header", &read_checkpoint_header, py::arg("path"));

  m.def(
      "default_config", [] { return to_json(RunConfig{}).dump(); },
      "Default run config as a JSON string.");
  m.def(
      "generate_dataset",
      [](const std::string& config_json, const std::filesystem::path& data_dir) {
        const DataIndex index = generate_dataset(run_config_from_json(nlohmann::json::parse(config_json)), data_dir);
        return index.subjects.size();
      },
      py::arg("config_json"), py::arg("data_dir"));
}
