#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lseg/dataio.hpp"
#include "lseg/segments.hpp"

namespace lseg::eval {

double temporal_iou(const Segment& a, const Segment& b);

struct GroundSegment {
  std::string video_id;
  int start = 0;
  int end = 0;
  int class_id = 0;
};

// Interpolated average precision for one class at one IoU threshold:
// predictions ranked by (score desc, start asc, video_id asc), greedy
// matching with each ground truth consumed at most once, then area under the
// precision envelope. Returns nullopt when the class has no ground truth.
std::optional<double> average_precision(const std::vector<dataio::PredictedSegment>& predictions,
                                        const std::vector<GroundSegment>& truths,
                                        double iou_threshold, int class_id);

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<double> map_per_threshold;
  double average_map = 0.0;
  // ap_table[c][k] is class c's AP at thresholds[k]; NaN marks classes
  // without ground truth.
  std::vector<std::vector<double>> ap_table;
  int num_classes = 0;

  double cp_precision = 0.0;
  double cp_recall = 0.0;
  double cp_f1 = 0.0;
  bool has_change_points = false;

  std::string to_text() const;   // key=value lines
  std::string to_csv() const;    // per-class AP table
};

EvalReport map_report(const std::vector<dataio::PredictedSegment>& predictions,
                      const std::vector<GroundSegment>& truths,
                      const std::vector<double>& thresholds);

struct PrF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct CpMatchCounts {
  int matched = 0;
  int detected = 0;
  int truth = 0;
};

// One-to-one greedy matching within +-tolerance snippets, nearest pairs first.
CpMatchCounts match_change_points(const ChangePointSet& detected,
                                  const ChangePointSet& truth, int tolerance);
PrF1 changepoint_f1(const ChangePointSet& detected, const ChangePointSet& truth,
                    int tolerance);
PrF1 prf1_from_counts(const CpMatchCounts& counts);

std::vector<GroundSegment> ground_segments_of(const dataio::GroundTruth& gt);

}  // namespace lseg::eval
