#include "pcet/ingest.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <json.hpp>

#include "pcet/errors.hpp"

namespace pcet::ingest {

using json = nlohmann::json;

namespace {

using Mat3 = std::array<double, 9>;

Mat3 inverse3(const Mat3& m) {
  const double a = m[0], b = m[1], c = m[2], d = m[3], e = m[4], f = m[5], g = m[6], h = m[7], i = m[8];
  const double A = e * i - f * h, B = -(d * i - f * g), C = d * h - e * g;
  const double det = a * A + b * B + c * C;
  if (std::abs(det) < 1e-15) throw FormatError("calibration matrix is singular");
  const double s = 1.0 / det;
  return {A * s, -(b * i - c * h) * s, (b * f - c * e) * s,
          B * s, (a * i - c * g) * s,  -(a * f - c * d) * s,
          C * s, -(a * h - b * g) * s, (a * e - b * d) * s};
}

Vec3 apply3(const Mat3& m, const Vec3& v) {
  return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
          m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

Mat3 rotation_part(const std::array<double, 12>& t) {
  return {t[0], t[1], t[2], t[4], t[5], t[6], t[8], t[9], t[10]};
}

Vec3 translation_part(const std::array<double, 12>& t) { return {t[3], t[7], t[11]}; }

std::string read_all(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string format_index(const char* fmt, long v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

}  // namespace

// ---- velodyne ----------------------------------------------------------

PointCloud read_velodyne(const fs::path& path) {
  std::string data;
  try {
    data = read_all(path);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error("read_velodyne: " + std::string(e.what()));
  }
  if (data.size() % 16 != 0) {
    throw FormatError(path.string() + ": byte length " + std::to_string(data.size()) +
                      " is not a multiple of 16");
  }
  const std::size_t n = data.size() / 16;
  PointCloud cloud;
  cloud.points.reserve(n);
  cloud.intensity.reserve(n);
  auto f32 = [&](std::size_t off) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b)
      u |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[off + static_cast<std::size_t>(b)])) << (8 * b);
    return static_cast<double>(std::bit_cast<float>(u));
  };
  for (std::size_t i = 0; i < n; ++i) {
    cloud.points.push_back({f32(i * 16), f32(i * 16 + 4), f32(i * 16 + 8)});
    cloud.intensity.push_back(f32(i * 16 + 12));
  }
  return cloud;
}

void write_velodyne(const fs::path& path, const PointCloud& cloud) {
  std::string out;
  out.reserve(cloud.size() * 16);
  auto put = [&](double v) {
    const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xFF));
  };
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    put(cloud.points[i].x);
    put(cloud.points[i].y);
    put(cloud.points[i].z);
    put(cloud.has_intensity() ? cloud.intensity[i] : 0.0);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_velodyne: cannot open " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

// ---- calibration -------------------------------------------------------

Vec3 Calibration::camera_to_velo(const Vec3& p) const {
  const Vec3 q = apply3(inverse3(r_rect), p);
  return apply3(inverse3(rotation_part(velo_to_cam)), q - translation_part(velo_to_cam));
}

Vec3 Calibration::velo_to_camera(const Vec3& p) const {
  return apply3(r_rect, apply3(rotation_part(velo_to_cam), p) + translation_part(velo_to_cam));
}

Vec3 Calibration::camera_dir_to_velo(const Vec3& d) const {
  return apply3(inverse3(rotation_part(velo_to_cam)), apply3(inverse3(r_rect), d));
}

Vec3 Calibration::velo_dir_to_camera(const Vec3& d) const {
  return apply3(r_rect, apply3(rotation_part(velo_to_cam), d));
}

Calibration read_calib(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_calib: cannot open " + path.string());
  Calibration c;
  bool have_rect = false, have_tr = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::istringstream is(line);
    std::string key;
    if (!(is >> key)) continue;
    if (key.ends_with(':')) key.pop_back();
    std::vector<double> vals;
    double v;
    while (is >> v) vals.push_back(v);
    auto need = [&](std::size_t n) {
      if (vals.size() != n) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + key + " expects " +
                          std::to_string(n) + " values, got " + std::to_string(vals.size()));
      }
    };
    if (key == "R_rect" || key == "R0_rect") {
      need(9);
      std::copy(vals.begin(), vals.end(), c.r_rect.begin());
      have_rect = true;
    } else if (key == "Tr_velo_cam" || key == "Tr_velo_to_cam") {
      need(12);
      std::copy(vals.begin(), vals.end(), c.velo_to_cam.begin());
      have_tr = true;
    }
  }
  if (!have_rect || !have_tr) {
    throw FormatError(path.string() + ": missing " + std::string(!have_rect ? "R_rect" : "Tr_velo_cam"));
  }
  return c;
}

Box3D camera_to_velo_box(const CameraBox& cam, const Calibration& calib) {
  // Camera y points down; the label location is the bottom-face center.
  const Vec3 center_cam = cam.location - Vec3{0.0, cam.h / 2.0, 0.0};
  const Vec3 heading_cam{std::cos(cam.rotation_y), 0.0, -std::sin(cam.rotation_y)};
  const Vec3 heading = calib.camera_dir_to_velo(heading_cam);
  return {calib.camera_to_velo(center_cam), {cam.l, cam.w, cam.h}, std::atan2(heading.y, heading.x)};
}

CameraBox velo_to_camera_box(const Box3D& box, const Calibration& calib) {
  CameraBox cam;
  cam.l = box.size().x;
  cam.w = box.size().y;
  cam.h = box.size().z;
  cam.location = calib.velo_to_camera(box.center()) + Vec3{0.0, cam.h / 2.0, 0.0};
  const Vec3 d = calib.velo_dir_to_camera({std::cos(box.yaw()), std::sin(box.yaw()), 0.0});
  cam.rotation_y = std::atan2(-d.z, d.x);
  return cam;
}

// ---- labels ------------------------------------------------------------

std::vector<Tracklet> read_labels(const fs::path& path, const Calibration& calib, int sequence) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_labels: cannot open " + path.string());
  std::vector<Tracklet> out;
  std::map<int, std::size_t> slot;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::istringstream is(line);
    std::vector<std::string> tok;
    for (std::string t; is >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (tok.size() != 17 && tok.size() != 18) {
      throw FormatError(where + ": expected 17 or 18 fields, got " + std::to_string(tok.size()));
    }
    std::vector<double> num(tok.size(), 0.0);
    for (std::size_t i = 0; i < tok.size(); ++i) {
      if (i == 2) continue;
      try {
        std::size_t used = 0;
        num[i] = std::stod(tok[i], &used);
        if (used != tok[i].size()) throw std::invalid_argument(tok[i]);
      } catch (const std::exception&) {
        throw FormatError(where + ": field " + std::to_string(i + 1) + " is not numeric: '" + tok[i] + "'");
      }
    }
    if (tok[2] == "DontCare") continue;
    const int frame = static_cast<int>(num[0]);
    const int track = static_cast<int>(num[1]);
    if (frame < 0) throw FormatError(where + ": negative frame index");
    CameraBox cam{num[10], num[11], num[12], {num[13], num[14], num[15]}, num[16]};
    Box3D box = [&] {
      try {
        return camera_to_velo_box(cam, calib);
      } catch (const std::invalid_argument& e) {
        throw FormatError(where + ": " + e.what());
      }
    }();

    auto [it, fresh] = slot.try_emplace(track, out.size());
    if (fresh) out.push_back(Tracklet{sequence, track, tok[2], {}, {}});
    Tracklet& t = out[it->second];
    if (!t.frames.empty() && static_cast<std::size_t>(frame) <= t.frames.back()) {
      throw FormatError(where + ": frame indices of track " + std::to_string(track) + " not increasing");
    }
    t.frames.push_back(static_cast<std::size_t>(frame));
    t.boxes.push_back(box);
  }
  return out;
}

// ---- split -------------------------------------------------------------

Split split_of(int scene) {
  if (scene >= 0 && scene <= 16) return Split::Train;
  if (scene == 17 || scene == 18) return Split::Val;
  if (scene == 19 || scene == 20) return Split::Test;
  throw ConfigError("unknown KITTI tracking scene id " + std::to_string(scene));
}

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

SceneSplit split_scenes(std::span<const int> scenes) {
  SceneSplit out;
  for (int s : scenes) {
    switch (split_of(s)) {
      case Split::Train: out.train.push_back(s); break;
      case Split::Val: out.val.push_back(s); break;
      case Split::Test: out.test.push_back(s); break;
    }
  }
  return out;
}

LabeledSequence tracklet_to_sequence(const Tracklet& t, const fs::path& velodyne_dir) {
  LabeledSequence seq;
  seq.name = format_index("%04ld", t.sequence) + "-" + std::to_string(t.object_id);
  seq.category = lower(t.category);
  for (std::size_t i = 0; i < t.frames.size(); ++i) {
    seq.frames.push_back(read_velodyne(velodyne_dir / (format_index("%06ld", static_cast<long>(t.frames[i])) + ".bin")));
    seq.boxes.push_back(t.boxes[i]);
    std::size_t inside = 0;
    for (const auto& p : seq.frames.back().points) inside += point_in_box(p, t.boxes[i]) ? 1 : 0;
    seq.fully_occluded.push_back(inside == 0);
  }
  return seq;
}

std::vector<LabeledSequence> load_kitti_scene(const fs::path& root, int scene,
                                              const std::vector<std::string>& categories) {
  const std::string id = format_index("%04ld", scene);
  const Calibration calib = read_calib(root / "calib" / (id + ".txt"));
  const auto tracklets = read_labels(root / "label_02" / (id + ".txt"), calib, scene);
  std::vector<LabeledSequence> out;
  for (const auto& t : tracklets) {
    const std::string cat = lower(t.category);
    if (!categories.empty() &&
        std::none_of(categories.begin(), categories.end(), [&](const std::string& c) { return lower(c) == cat; }))
      continue;
    out.push_back(tracklet_to_sequence(t, root / "velodyne" / id));
  }
  return out;
}

// ---- normalized form ---------------------------------------------------

void save_sequence(const fs::path& dir, const LabeledSequence& seq, const std::string& provenance) {
  fs::create_directories(dir / "clouds");
  json frames = json::array();
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const std::string cloud = format_index("%06ld", static_cast<long>(t)) + ".bin";
    write_velodyne(dir / "clouds" / cloud, seq.frames[t]);
    const Box3D& b = seq.boxes[t];
    frames.push_back({{"index", t},
                      {"cloud", "clouds/" + cloud},
                      {"box",
                       {{"center", {b.center().x, b.center().y, b.center().z}},
                        {"size", {b.size().x, b.size().y, b.size().z}},
                        {"yaw", b.yaw()}}},
                      {"fully_occluded", t < seq.fully_occluded.size() && seq.fully_occluded[t]}});
  }
  json doc = {{"format", "pcet-sequence"},
              {"version", 1},
              {"name", seq.name},
              {"category", seq.category},
              {"frames", frames}};
  if (!provenance.empty()) doc["provenance"] = provenance;
  std::ofstream f(dir / "labels.json", std::ios::trunc);
  if (!f) throw std::runtime_error("save_sequence: cannot write " + (dir / "labels.json").string());
  f << doc.dump(1) << '\n';
}

LabeledSequence load_sequence(const fs::path& dir) {
  const fs::path label_path = dir / "labels.json";
  json doc;
  try {
    doc = json::parse(read_all(label_path));
  } catch (const json::exception& e) {
    throw FormatError(label_path.string() + ": " + e.what());
  }
  try {
    if (doc.at("format") != "pcet-sequence") throw FormatError(label_path.string() + ": unknown format");
    LabeledSequence seq;
    seq.name = doc.at("name").get<std::string>();
    seq.category = doc.at("category").get<std::string>();
    for (const auto& fr : doc.at("frames")) {
      const auto& b = fr.at("box");
      const auto c = b.at("center").get<std::vector<double>>();
      const auto s = b.at("size").get<std::vector<double>>();
      if (c.size() != 3 || s.size() != 3) throw FormatError(label_path.string() + ": box needs 3-vectors");
      seq.boxes.emplace_back(Vec3{c[0], c[1], c[2]}, Vec3{s[0], s[1], s[2]}, b.at("yaw").get<double>());
      seq.frames.push_back(read_velodyne(dir / fr.at("cloud").get<std::string>()));
      seq.fully_occluded.push_back(fr.value("fully_occluded", false));
    }
    return seq;
  } catch (const json::exception& e) {
    throw FormatError(label_path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(label_path.string() + ": " + e.what());
  }
}

std::vector<LabeledSequence> load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw ConfigError("dataset directory not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "labels.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<LabeledSequence> out;
  for (const auto& d : dirs) out.push_back(load_sequence(d));
  return out;
}

void save_dataset(const fs::path& root, std::span<const LabeledSequence> seqs, const std::string& provenance) {
  fs::create_directories(root);
  for (std::size_t i = 0; i < seqs.size(); ++i)
    save_sequence(root / format_index("seq%05ld", static_cast<long>(i)), seqs[i], provenance);
}

}  // namespace pcet::ingest
