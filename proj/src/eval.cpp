#include "lseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace lseg::eval {

double temporal_iou(const Segment& a, const Segment& b) {
  int inter_lo = std::max(a.start, b.start);
  int inter_hi = std::min(a.end, b.end);
  int inter = std::max(0, inter_hi - inter_lo);
  int uni = (a.end - a.start) + (b.end - b.start) - inter;
  if (uni <= 0) return 0.0;
  return static_cast<double>(inter) / uni;
}

std::optional<double> average_precision(const std::vector<dataio::PredictedSegment>& predictions,
                                        const std::vector<GroundSegment>& truths,
                                        double iou_threshold, int class_id) {
  std::vector<const GroundSegment*> gts;
  for (const GroundSegment& g : truths)
    if (g.class_id == class_id) gts.push_back(&g);
  if (gts.empty()) return std::nullopt;

  std::vector<const dataio::PredictedSegment*> preds;
  for (const dataio::PredictedSegment& p : predictions)
    if (p.seg.class_id == class_id) preds.push_back(&p);
  if (preds.empty()) return 0.0;

  std::sort(preds.begin(), preds.end(),
            [](const dataio::PredictedSegment* a, const dataio::PredictedSegment* b) {
              if (a->seg.score != b->seg.score) return a->seg.score > b->seg.score;
              if (a->seg.start != b->seg.start) return a->seg.start < b->seg.start;
              return a->video_id < b->video_id;
            });

  std::vector<bool> consumed(gts.size(), false);
  int total_gt = static_cast<int>(gts.size());
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const dataio::PredictedSegment* p : preds) {
    int best = -1;
    double best_iou = iou_threshold;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (consumed[g] || gts[g]->video_id != p->video_id) continue;
      Segment gt_seg{gts[g]->start, gts[g]->end, gts[g]->class_id, 1.0};
      double iou = temporal_iou(p->seg, gt_seg);
      if (iou >= best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      consumed[static_cast<size_t>(best)] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / total_gt);
  }

  // Precision envelope, then area over recall steps.
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[static_cast<size_t>(i)] =
        std::max(precision[static_cast<size_t>(i)], precision[static_cast<size_t>(i) + 1]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

EvalReport map_report(const std::vector<dataio::PredictedSegment>& predictions,
                      const std::vector<GroundSegment>& truths,
                      const std::vector<double>& thresholds) {
  if (truths.empty()) throw shape_error("map_report: empty ground truth");
  if (thresholds.empty()) throw shape_error("map_report: no IoU thresholds");

  int num_classes = 0;
  for (const GroundSegment& g : truths) num_classes = std::max(num_classes, g.class_id + 1);
  for (const dataio::PredictedSegment& p : predictions)
    num_classes = std::max(num_classes, p.seg.class_id + 1);

  EvalReport rep;
  rep.thresholds = thresholds;
  rep.num_classes = num_classes;
  rep.ap_table.assign(static_cast<size_t>(num_classes),
                      std::vector<double>(thresholds.size(),
                                          std::numeric_limits<double>::quiet_NaN()));
  for (size_t k = 0; k < thresholds.size(); ++k) {
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < num_classes; ++c) {
      std::optional<double> ap = average_precision(predictions, truths, thresholds[k], c);
      if (ap) {
        rep.ap_table[static_cast<size_t>(c)][k] = *ap;
        sum += *ap;
        ++counted;
      }
    }
    rep.map_per_threshold.push_back(counted > 0 ? sum / counted : 0.0);
  }
  double total = 0.0;
  for (double v : rep.map_per_threshold) total += v;
  rep.average_map = total / static_cast<double>(rep.map_per_threshold.size());
  return rep;
}

CpMatchCounts match_change_points(const ChangePointSet& detected,
                                  const ChangePointSet& truth, int tolerance) {
  if (tolerance < 0) throw shape_error("match_change_points: negative tolerance");
  struct Pair {
    int dist;
    int di;
    int ti;
  };
  std::vector<Pair> pairs;
  for (int di = 0; di < detected.size(); ++di)
    for (int ti = 0; ti < truth.size(); ++ti) {
      int dist = std::abs(detected.points[static_cast<size_t>(di)] -
                          truth.points[static_cast<size_t>(ti)]);
      if (dist <= tolerance) pairs.push_back({dist, di, ti});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.di != b.di) return a.di < b.di;
    return a.ti < b.ti;
  });
  std::vector<bool> dused(static_cast<size_t>(detected.size()), false);
  std::vector<bool> tused(static_cast<size_t>(truth.size()), false);
  CpMatchCounts counts;
  counts.detected = detected.size();
  counts.truth = truth.size();
  for (const Pair& p : pairs) {
    if (dused[static_cast<size_t>(p.di)] || tused[static_cast<size_t>(p.ti)]) continue;
    dused[static_cast<size_t>(p.di)] = true;
    tused[static_cast<size_t>(p.ti)] = true;
    counts.matched += 1;
  }
  return counts;
}

PrF1 prf1_from_counts(const CpMatchCounts& counts) {
  PrF1 out;
  out.precision = counts.detected > 0
                      ? static_cast<double>(counts.matched) / counts.detected
                      : 0.0;
  out.recall = counts.truth > 0 ? static_cast<double>(counts.matched) / counts.truth : 0.0;
  out.f1 = (out.precision + out.recall) > 0.0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

PrF1 changepoint_f1(const ChangePointSet& detected, const ChangePointSet& truth,
                    int tolerance) {
  return prf1_from_counts(match_change_points(detected, truth, tolerance));
}

std::vector<GroundSegment> ground_segments_of(const dataio::GroundTruth& gt) {
  std::vector<GroundSegment> out;
  for (const dataio::VideoGroundTruth& v : gt.videos)
    for (const dataio::AnnotatedSegment& s : v.segments)
      out.push_back(GroundSegment{v.video_id, s.start, s.end, s.class_id});
  return out;
}

namespace {

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << std::fixed << v;
  return ss.str();
}

}  // namespace

std::string EvalReport::to_text() const {
  std::ostringstream ss;
  for (size_t k = 0; k < thresholds.size(); ++k)
    ss << "map@" << thresholds[k] << "=" << fmt(map_per_threshold[k]) << "\n";
  ss << "avg_map=" << fmt(average_map) << "\n";
  if (has_change_points) {
    ss << "cp_precision=" << fmt(cp_precision) << "\n";
    ss << "cp_recall=" << fmt(cp_recall) << "\n";
    ss << "cp_f1=" << fmt(cp_f1) << "\n";
  }
  return ss.str();
}

std::string EvalReport::to_csv() const {
  std::ostringstream ss;
  ss << "class";
  for (double thr : thresholds) ss << ",ap@" << thr;
  ss << "\n";
  for (int c = 0; c < num_classes; ++c) {
    ss << c;
    for (size_t k = 0; k < thresholds.size(); ++k) {
      double v = ap_table[static_cast<size_t>(c)][k];
      ss << ",";
      if (std::isnan(v))
        ss << "na";
      else
        ss << fmt(v);
    }
    ss << "\n";
  }
  return ss.str();
}

}  // namespace lseg::eval
