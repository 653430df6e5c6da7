#pragma once

#include <string>
#include <vector>

#include "pcet/cloud.hpp"
#include "pcet/geom.hpp"

namespace pcet {

/// One tracked object: per-frame clouds and ground-truth boxes.
struct LabeledSequence {
  std::string name;
  std::string category;
  std::vector<PointCloud> frames;
  std::vector<Box3D> boxes;
  /// True where no target return survives (GT box may be empty).
  std::vector<bool> fully_occluded;

  std::size_t size() const { return frames.size(); }
};

}  // namespace pcet
