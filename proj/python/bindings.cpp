#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cli.hpp"
#include "pcet/analysis.hpp"
#include "pcet/errors.hpp"
#include "pcet/ingest.hpp"
#include "pcet/sim.hpp"
#include "pcet/train.hpp"

namespace py = pybind11;
using namespace pcet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<Vec3> to_points(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) < 3) throw ShapeError("expected an (N, 3) array");
  std::vector<Vec3> out(static_cast<std::size_t>(a.shape(0)));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out[static_cast<std::size_t>(i)] = {r(i, 0), r(i, 1), r(i, 2)};
  return out;
}

Array from_cloud(const PointCloud& c) {
  Array out({static_cast<py::ssize_t>(c.size()), py::ssize_t{4}});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto k = static_cast<py::ssize_t>(i);
    w(k, 0) = c.points[i].x;
    w(k, 1) = c.points[i].y;
    w(k, 2) = c.points[i].z;
    w(k, 3) = c.has_intensity() ? c.intensity[i] : 0.0;
  }
  return out;
}

PointCloud to_cloud(const Array& a) {
  PointCloud c;
  c.points = to_points(a);
  if (a.shape(1) >= 4) {
    auto r = a.unchecked<2>();
    for (py::ssize_t i = 0; i < a.shape(0); ++i) c.intensity.push_back(r(i, 3));
  }
  return c;
}

ad::Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array");
  const auto* p = a.data();
  return ad::Tensor::constant({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
                              std::vector<double>(p, p + a.size()));
}

py::tuple vec(const Vec3& v) { return py::make_tuple(v.x, v.y, v.z); }
Vec3 vec(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }

py::dict sequence_dict(const LabeledSequence& s) {
  py::list frames, boxes;
  for (const auto& f : s.frames) frames.append(from_cloud(f));
  for (const auto& b : s.boxes) boxes.append(b);
  py::dict d;
  d["name"] = s.name;
  d["category"] = s.category;
  d["frames"] = frames;
  d["boxes"] = boxes;
  d["fully_occluded"] = s.fully_occluded;
  return d;
}

LabeledSequence sequence_from(const py::dict& d) {
  LabeledSequence s;
  s.name = d.contains("name") ? d["name"].cast<std::string>() : "sequence";
  s.category = d.contains("category") ? d["category"].cast<std::string>() : "car";
  for (auto f : d["frames"]) s.frames.push_back(to_cloud(f.cast<Array>()));
  for (auto b : d["boxes"]) s.boxes.push_back(b.cast<Box3D>());
  s.fully_occluded.assign(s.frames.size(), false);
  return s;
}

py::dict score_dict(const metrics::Score& s) {
  py::dict d;
  d["category"] = s.category;
  d["success"] = s.success;
  d["precision"] = s.precision;
  d["frames"] = s.frames;
  return d;
}

}  // namespace

PYBIND11_MODULE(_pcet, m) {
  m.doc() = "Point-cloud single-object tracker: geometry, sampling, ARP/TKT heads, OPE metrics.";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<FormatError>(m, "FormatError");
  py::register_exception<NumericError>(m, "NumericError");

  py::class_<Box3D>(m, "Box3D")
      .def(py::init([](std::array<double, 3> c, std::array<double, 3> s, double yaw) {
             return Box3D(vec(c), vec(s), yaw);
           }),
           py::arg("center"), py::arg("size"), py::arg("yaw") = 0.0)
      .def_property_readonly("center", [](const Box3D& b) { return vec(b.center()); })
      .def_property_readonly("size", [](const Box3D& b) { return vec(b.size()); })
      .def_property_readonly("yaw", &Box3D::yaw)
      .def_property_readonly("volume", &Box3D::volume)
      .def("corners",
           [](const Box3D& b) {
             py::list out;
             for (const auto& c : b.corners()) out.append(vec(c));
             return out;
           })
      .def("__repr__", [](const Box3D& b) {
        return "Box3D(center=(" + std::to_string(b.center().x) + ", " + std::to_string(b.center().y) + ", " +
               std::to_string(b.center().z) + "), yaw=" + std::to_string(b.yaw()) + ")";
      });

  m.def("iou3d", &iou3d, py::arg("a"), py::arg("b"));
  m.def("center_distance", &center_distance);
  m.def("wrap_angle", &wrap_angle);
  m.def(
      "transform_box",
      [](const Box3D& b, std::array<double, 3> t, double rotation, std::array<double, 3> pivot) {
        return transform_box(b, RigidMotion{vec(t), rotation}, vec(pivot));
      },
      py::arg("box"), py::arg("translation"), py::arg("rotation"), py::arg("pivot"));
  m.def(
      "points_in_box", [](const Array& pts, const Box3D& b) { return points_in_box(to_points(pts), b); },
      py::arg("points"), py::arg("box"));

  m.def(
      "fps", [](const Array& pts, std::size_t k, std::size_t start) { return fps(to_points(pts), k, start); },
      py::arg("points"), py::arg("k"), py::arg("seed_index") = 0);

  m.def("success_auc", [](std::vector<double> v) { return metrics::success_auc(v); });
  m.def("precision_auc", [](std::vector<double> v) { return metrics::precision_auc(v); });

  m.def(
      "arp_identity",
      [](const Array& offsets, std::vector<double> scores, std::vector<double> distances) {
        nn::ParameterStore store;
        Rng rng(0);
        auto arp = heads::ArpModule::create(store, "arp", rng);
        arp.set_identity();
        const std::size_t n = scores.size();
        heads::CandidateSet c{to_tensor(offsets), ad::Tensor::constant({n, 1}, scores),
                              ad::Tensor::constant({n, 1}, distances)};
        const auto r = heads::arp_aggregate(c, arp, nullptr);
        const auto w = r.weights.values();
        const auto v = r.refined.values();
        return py::make_tuple(std::vector<double>(w.begin(), w.end()), std::vector<double>(v.begin(), v.end()));
      },
      py::arg("offsets"), py::arg("scores"), py::arg("distances"),
      "ARP with the identity MLP: returns (weights, refined offset).");

  m.def(
      "tkt_loss", [](const Array& dev, const Array& src) { return heads::tkt_loss(to_tensor(dev), to_tensor(src)).item(); },
      py::arg("dev"), py::arg("src"));

  m.def("read_velodyne", [](const std::filesystem::path& p) { return from_cloud(ingest::read_velodyne(p)); });
  m.def("write_velodyne",
        [](const std::filesystem::path& p, const Array& a) { ingest::write_velodyne(p, to_cloud(a)); });
  m.def("split_of", [](int scene) { return std::string(ingest::to_string(ingest::split_of(scene))); });

  m.def(
      "generate_sequence",
      [](const std::string& category, std::uint64_t seed, std::size_t frames, double occlusion) {
        auto cfg = sim::category_preset(category);
        cfg.seed = seed;
        cfg.frames = frames;
        cfg.occlusion = occlusion;
        return sequence_dict(sim::generate_sequence(cfg));
      },
      py::arg("category") = "car", py::arg("seed") = 0, py::arg("frames") = 10, py::arg("occlusion") = 0.3);

  py::class_<PcetModel>(m, "Model")
      .def(py::init([](const std::string& preset, std::uint64_t seed) {
             return std::make_unique<PcetModel>(preset_config(preset).model, seed);
           }),
           py::arg("preset") = "desk", py::arg("seed") = 0)
      .def("load", [](PcetModel& self, const std::string& path) { train::load_model(self, path); })
      .def("parameter_count",
           [](PcetModel& self) {
             std::size_t n = 0;
             for (auto* p : self.parameters()) n += p->value.size();
             return n;
           })
      .def(
          "track",
          [](const PcetModel& self, const py::dict& seq, const std::string& mode, std::uint64_t seed) {
            const LabeledSequence s = sequence_from(seq);
            if (s.size() < 1 || s.boxes.empty()) throw ConfigError("track: sequence needs frames and a first box");
            PcetTracker tracker(self, parse_mode(mode), seed);
            tracker.init(s.frames[0], s.boxes[0]);
            std::vector<Box3D> out;
            for (std::size_t t = 1; t < s.size(); ++t) out.push_back(tracker.track(s.frames[t]));
            return out;
          },
          py::arg("sequence"), py::arg("mode") = "pcet", py::arg("seed") = 0)
      .def(
          "evaluate",
          [](const PcetModel& self, const std::vector<py::dict>& seqs, const std::string& mode, std::uint64_t seed) {
            std::vector<LabeledSequence> data;
            for (const auto& d : seqs) data.push_back(sequence_from(d));
            metrics::OpeReport r;
            {
              py::gil_scoped_release release;
              r = mode == "keep"
                      ? metrics::run_ope([] { return std::make_unique<metrics::KeepBoxTracker>(); }, data)
                      : metrics::run_ope(tracker_factory(self, parse_mode(mode), seed), data);
            }
            return score_dict(r.mean);
          },
          py::arg("sequences"), py::arg("mode") = "pcet", py::arg("seed") = 0);

  m.def(
      "config_digest",
      [](const std::string& preset, std::uint64_t seed) {
        auto cfg = preset_config(preset);
        cfg.seed = seed;
        return cfg.digest();
      },
      py::arg("preset") = "desk", py::arg("seed") = 0);

  m.def(
      "cli", [](const std::vector<std::string>& args) { return cli::run(args); }, py::arg("args"),
      "Runs the pcet command line in-process and returns its exit code.");
}
