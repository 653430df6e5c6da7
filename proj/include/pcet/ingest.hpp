#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pcet/sequence.hpp"

namespace pcet::ingest {

namespace fs = std::filesystem;

/// KITTI velodyne scan: consecutive little-endian float32 (x, y, z, intensity).
PointCloud read_velodyne(const fs::path& path);
void write_velodyne(const fs::path& path, const PointCloud& cloud);

/// Rectification and lidar-to-camera transform of a KITTI calibration file.
struct Calibration {
  std::array<double, 9> r_rect{1, 0, 0, 0, 1, 0, 0, 0, 1};            ///< row-major 3x3
  std::array<double, 12> velo_to_cam{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};  ///< row-major 3x4

  /// Rectified camera coordinates to lidar coordinates.
  Vec3 camera_to_velo(const Vec3& p) const;
  Vec3 velo_to_camera(const Vec3& p) const;
  /// Direction vectors (no translation).
  Vec3 camera_dir_to_velo(const Vec3& d) const;
  Vec3 velo_dir_to_camera(const Vec3& d) const;
};

/// Accepts both tracking ("R_rect", "Tr_velo_cam") and object ("R0_rect:",
/// "Tr_velo_to_cam:") key spellings.
Calibration read_calib(const fs::path& path);

/// Camera-frame KITTI label pose: bottom-center location, dimensions, rotation_y.
struct CameraBox {
  double h = 0, w = 0, l = 0;
  Vec3 location;
  double rotation_y = 0;
};

Box3D camera_to_velo_box(const CameraBox& cam, const Calibration& calib);
CameraBox velo_to_camera_box(const Box3D& box, const Calibration& calib);

struct Tracklet {
  int sequence = 0;
  int object_id = 0;
  std::string category;
  std::vector<std::size_t> frames;  ///< strictly increasing
  std::vector<Box3D> boxes;         ///< lidar frame
};

/// Parses a KITTI tracking label file and groups rows by track id (in order of
/// first appearance). "DontCare" rows are dropped.
std::vector<Tracklet> read_labels(const fs::path& path, const Calibration& calib, int sequence = 0);

enum class Split { Train, Val, Test };

/// Scenes 0-16 train, 17-18 validation, 19-20 test.
Split split_of(int scene);
const char* to_string(Split s);

struct SceneSplit {
  std::vector<int> train, val, test;
};
SceneSplit split_scenes(std::span<const int> scenes);

/// Loads the scans of a tracklet's frames from `velodyne_dir/%06d.bin`. The
/// sequence category is the lower-cased KITTI type ("car", "pedestrian", ...).
LabeledSequence tracklet_to_sequence(const Tracklet& t, const fs::path& velodyne_dir);

/// Reads every tracklet of one KITTI tracking scene under `root`
/// (calib/SSSS.txt, label_02/SSSS.txt, velodyne/SSSS/FFFFFF.bin). Category
/// filtering is case-insensitive; an empty list keeps every tracklet.
std::vector<LabeledSequence> load_kitti_scene(const fs::path& root, int scene,
                                              const std::vector<std::string>& categories = {});

// Normalized on-disk form shared by real and synthetic data:
//   <dir>/labels.json           sequence metadata + per-frame boxes
//   <dir>/clouds/FFFFFF.bin     velodyne-format scans
void save_sequence(const fs::path& dir, const LabeledSequence& seq, const std::string& provenance = {});
LabeledSequence load_sequence(const fs::path& dir);

/// Every sequence directory under `root` (sorted by name).
std::vector<LabeledSequence> load_dataset(const fs::path& root);
void save_dataset(const fs::path& root, std::span<const LabeledSequence> seqs,
                  const std::string& provenance = {});

}  // namespace pcet::ingest
