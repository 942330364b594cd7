#pragma once

#include <vector>

#include "lseg/mat.hpp"

namespace lseg {

// Scored action segment over snippet indices, [start, end).
struct Segment {
  int start = 0;
  int end = 0;
  int class_id = 0;
  double score = 0.0;
};

void validate_segment(const Segment& s, int t_total, int num_classes);

// Sorted unique snippet indices in [0, T).
struct ChangePointSet {
  std::vector<int> points;

  static ChangePointSet from(std::vector<int> pts, int t_total);
  bool contains(int p) const;
  int size() const { return static_cast<int>(points.size()); }
};

}  // namespace lseg
