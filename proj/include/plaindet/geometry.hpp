#pragma once

#include <vector>

#include "plaindet/matrix.hpp"

namespace plaindet {

// Normalized center-format box.
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;
};

// Annotations for one image under one label space.
struct GroundTruth {
  std::vector<Box> boxes;
  std::vector<int> classes;

  int size() const { return static_cast<int>(boxes.size()); }
};

double box_iou(const Box& a, const Box& b);

// Generalized IoU in (-1, 1]; giou(a, a) == 1. Throws on non-positive extent.
double giou(const Box& a, const Box& b);

}  // namespace plaindet
