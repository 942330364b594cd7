#include "lseg/segments.hpp"

#include <algorithm>

namespace lseg {

void validate_segment(const Segment& s, int t_total, int num_classes) {
  if (!(0 <= s.start && s.start < s.end && s.end <= t_total))
    throw shape_error("segment: bad interval [" + std::to_string(s.start) +
                      ", " + std::to_string(s.end) + ") with T=" +
                      std::to_string(t_total));
  if (s.class_id < 0 || s.class_id >= num_classes)
    throw shape_error("segment: class id " + std::to_string(s.class_id) +
                      " out of range");
}

ChangePointSet ChangePointSet::from(std::vector<int> pts, int t_total) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  for (int p : pts)
    if (p < 0 || p >= t_total)
      throw shape_error("change-point " + std::to_string(p) +
                        " outside [0, " + std::to_string(t_total) + ")");
  return ChangePointSet{std::move(pts)};
}

bool ChangePointSet::contains(int p) const {
  return std::binary_search(points.begin(), points.end(), p);
}

}  // namespace lseg
