#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "diffaug/cli.hpp"
#include "diffaug/config.hpp"
#include "diffaug/data.hpp"
#include "diffaug/detection_eval.hpp"
#include "diffaug/diffusion.hpp"
#include "diffaug/schedules.hpp"

namespace py = pybind11;
using namespace diffaug;

namespace {

using Array = py::array_t<Real, py::array::c_style | py::array::forcecast>;
using BoxTuple = std::tuple<Real, Real, Real, Real>;
using ScoredTuple = std::tuple<Real, Real, Real, Real, Real>;

BoundingBox to_box(const BoxTuple& b) {
  auto [x, y, w, h] = b;
  return {x, y, w, h, kPedestrianCategory, std::nullopt};
}

ImageTensor image_from_array(const Array& a) {
  if (a.ndim() != 3) throw std::invalid_argument("expected an array of shape (C, H, W)");
  Tensor t({1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))});
  std::copy(a.data(), a.data() + a.size(), t.data());
  return ImageTensor(std::move(t), ValueRange::kSymmetric);
}

Array array_from_image(const ImageTensor& img) {
  const Shape s = img.shape();
  Array out({s.c, s.h, s.w});
  std::copy(img.pixels.data(), img.pixels.data() + img.pixels.size(), out.mutable_data());
  return out;
}

py::dict summary(const DetectionDataset& d) {
  std::size_t boxes = 0;
  for (const auto& item : d.items) boxes += item.annotations.size();
  py::dict out;
  out["images"] = d.size();
  out["boxes"] = boxes;
  out["provenance"] = d.provenance.dump();
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Diffusion-based sim2real augmentation toolkit";

  py::class_<VarianceSchedule>(m, "Schedule")
      .def_property_readonly("T", &VarianceSchedule::T)
      .def("beta", &VarianceSchedule::beta, py::arg("t"))
      .def("alpha_bar", &VarianceSchedule::alpha_bar, py::arg("t"))
      .def("signal_to_noise", [](const VarianceSchedule& s, int t) { return signal_to_noise(s, t); },
           py::arg("t"));

  m.def("linear_schedule", &make_linear_schedule, py::arg("T"), py::arg("beta_start"), py::arg("beta_end"));

  m.def(
      "q_sample",
      [](const Array& x0, int t, const VarianceSchedule& s, std::uint64_t seed) {
        const ImageTensor img = image_from_array(x0);
        return array_from_image(q_sample(img, t, s, make_noise(img.shape(), seed)));
      },
      py::arg("x0"), py::arg("t"), py::arg("schedule"), py::arg("seed"),
      "Closed-form forward noising of a (C, H, W) image in [-1, 1].");

  m.def("iou", [](const BoxTuple& a, const BoxTuple& b) { return iou(to_box(a), to_box(b)); }, py::arg("a"),
        py::arg("b"));

  m.def(
      "average_precision",
      [](const std::vector<std::vector<BoxTuple>>& gts, const std::vector<std::vector<ScoredTuple>>& preds,
         Real iou_threshold, const std::string& interpolation) {
        std::vector<std::vector<BoundingBox>> g(gts.size()), p(preds.size());
        for (std::size_t i = 0; i < gts.size(); ++i)
          for (const auto& b : gts[i]) g[i].push_back(to_box(b));
        for (std::size_t i = 0; i < preds.size(); ++i)
          for (const auto& [x, y, w, h, c] : preds[i]) p[i].push_back({x, y, w, h, kPedestrianCategory, c});
        const EvalReport r = average_precision(g, p, iou_threshold, parse_interpolation(interpolation));
        py::dict out;
        out["ap"] = r.ap;
        out["num_gt"] = r.counts.num_gt;
        out["num_tp"] = r.counts.num_tp;
        out["num_fp"] = r.counts.num_fp;
        std::vector<Real> recall, precision;
        for (const auto& pt : r.pr_points) {
          recall.push_back(pt.recall);
          precision.push_back(pt.precision);
        }
        out["recall"] = recall;
        out["precision"] = precision;
        return out;
      },
      py::arg("gts"), py::arg("preds"), py::arg("iou_threshold") = 0.5, py::arg("interpolation") = "coco101",
      "Pooled AP. gts: per-image lists of (x, y, w, h); preds: per-image lists of "
      "(x, y, w, h, score) sorted by descending score.");

  m.def(
      "render_toy",
      [](const std::string& domain, int n, const std::filesystem::path& out, std::uint64_t seed, int side) {
        ToyDomainSpec spec = ToyDomainSpec::defaults(parse_toy_domain(domain), seed);
        spec.side = side;
        const DetectionDataset d = render_toy_dataset(spec, n);
        save_dataset(d, out);
        return summary(d);
      },
      py::arg("domain"), py::arg("n"), py::arg("out"), py::arg("seed") = 1, py::arg("side") = 32);

  m.def("dataset_summary", [](const std::filesystem::path& p) { return summary(load_dataset(p)); },
        py::arg("path"));

  m.def(
      "mix",
      [](const std::filesystem::path& base, const std::filesystem::path& augment,
         const std::filesystem::path& out) {
        const DetectionDataset d = mix_datasets(load_dataset(base), load_dataset(augment));
        save_dataset(d, out);
        return summary(d);
      },
      py::arg("base"), py::arg("augment"), py::arg("out"));

  m.def(
      "resize",
      [](const std::filesystem::path& data, int side, const std::filesystem::path& out) {
        const DetectionDataset d = resize_dataset(load_dataset(data), side);
        save_dataset(d, out);
        return summary(d);
      },
      py::arg("data"), py::arg("side"), py::arg("out"));

  m.def("config_hash", [](const std::filesystem::path& p) { return load_experiment_config(p).hash(); },
        py::arg("path"));

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "diffaug");
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli_main(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a CLI subcommand in-process; returns (exit_code, stdout, stderr).");
}
