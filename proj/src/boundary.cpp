#include "lseg/boundary.hpp"

#include <algorithm>
#include <cmath>

namespace lseg::boundary {

void LcsConfig::validate() const {
  if (!(cosine_threshold > 0.0 && cosine_threshold < 1.0))
    throw shape_error("lcs config: cosine threshold must be in (0,1)");
  if (!(redundancy_ratio > 0.0 && redundancy_ratio <= 1.0))
    throw shape_error("lcs config: redundancy ratio must be in (0,1]");
  if (!(fg_threshold > 0.0 && fg_threshold < 1.0))
    throw shape_error("lcs config: fg threshold must be in (0,1)");
}

int classic_lcs(int n, int m, const std::function<bool(int, int)>& match) {
  if (n <= 0 || m <= 0) return 0;
  std::vector<int> prev(static_cast<size_t>(m) + 1, 0);
  std::vector<int> cur(static_cast<size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    for (int j = 1; j <= m; ++j) {
      if (match(i - 1, j - 1))
        cur[static_cast<size_t>(j)] = prev[static_cast<size_t>(j) - 1] + 1;
      else
        cur[static_cast<size_t>(j)] =
            std::max(prev[static_cast<size_t>(j)], cur[static_cast<size_t>(j) - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[static_cast<size_t>(m)];
}

int classic_lcs(const std::vector<int>& a, const std::vector<int>& b) {
  return classic_lcs(static_cast<int>(a.size()), static_cast<int>(b.size()),
                     [&](int i, int j) {
                       return a[static_cast<size_t>(i)] == b[static_cast<size_t>(j)];
                     });
}

ChangePointSet lcs_prune(const ChangePointSet& points, const Mat& features,
                         const LcsConfig& cfg) {
  cfg.validate();
  for (int p : points.points)
    if (p < 0 || p >= features.rows)
      throw shape_error("lcs_prune: change-point outside the sequence");
  std::vector<int> pts = points.points;
  if (pts.size() < 3) return ChangePointSet{pts};

  size_t i = 0;
  while (i + 2 < pts.size()) {
    int a = pts[i], b = pts[i + 1], c = pts[i + 2];
    int left_len = b - a;
    int right_len = c - b;
    auto match = [&](int li, int rj) {
      return cosine_similarity(row_of(features, a + li), row_of(features, b + rj)) >=
             cfg.cosine_threshold;
    };
    int lcs = classic_lcs(left_len, right_len, match);
    double ratio = right_len > 0 ? static_cast<double>(lcs) / right_len : 0.0;
    if (ratio >= cfg.redundancy_ratio) {
      pts.erase(pts.begin() + static_cast<std::ptrdiff_t>(i) + 1);
    } else {
      ++i;
    }
  }
  return ChangePointSet{std::move(pts)};
}

namespace {

Mat snippet_probs(const efc::CasMap& cas, int t) {
  int classes = cas.num_classes_with_bg();
  Mat logits(classes, 1);
  for (int c = 0; c < classes; ++c) logits[c] = cas.logits.at(c, t);
  double mx = logits[0];
  for (int c = 1; c < classes; ++c) mx = std::max(mx, logits[c]);
  double z = 0.0;
  for (int c = 0; c < classes; ++c) {
    logits[c] = std::exp(logits[c] - mx);
    z += logits[c];
  }
  for (int c = 0; c < classes; ++c) logits[c] /= z;
  return logits;
}

struct Interval {
  int start, end;
  int class_id;
};

}  // namespace

std::vector<Segment> extract_segments(const ChangePointSet& points,
                                      const efc::CasMap& cas, const LcsConfig& cfg) {
  cfg.validate();
  int t_total = cas.snippet_count();
  int num_actions = cas.num_classes_with_bg() - 1;
  if (t_total < 1) return {};

  std::vector<int> bounds;
  bounds.push_back(0);
  for (int p : points.points)
    if (p > 0 && p < t_total) bounds.push_back(p);
  bounds.push_back(t_total);
  bounds.erase(std::unique(bounds.begin(), bounds.end()), bounds.end());

  int fg = static_cast<int>(efc::Branch::Foreground);
  std::vector<Interval> kept;
  for (size_t i = 0; i + 1 < bounds.size(); ++i) {
    int lo = bounds[i], hi = bounds[i + 1];
    double mean_fg = 0.0;
    for (int t = lo; t < hi; ++t) mean_fg += cas.attention.at(fg, t);
    mean_fg /= (hi - lo);
    if (mean_fg < cfg.fg_threshold) continue;

    int best = 0;
    double best_score = -1e300;
    for (int c = 0; c < num_actions; ++c) {
      double s = 0.0;
      for (int t = lo; t < hi; ++t)
        s += cas.attention.at(fg, t) * cas.logits.at(c, t);
      s /= (hi - lo);
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    kept.push_back({lo, hi, best});
  }

  // Merge contiguous intervals of the same class before scoring.
  std::vector<Interval> merged;
  for (const Interval& iv : kept) {
    if (!merged.empty() && merged.back().end == iv.start &&
        merged.back().class_id == iv.class_id)
      merged.back().end = iv.end;
    else
      merged.push_back(iv);
  }

  std::vector<Segment> out;
  out.reserve(merged.size());
  for (const Interval& iv : merged) {
    double score = 0.0;
    for (int t = iv.start; t < iv.end; ++t)
      score += snippet_probs(cas, t)[iv.class_id];
    score /= (iv.end - iv.start);
    out.push_back(Segment{iv.start, iv.end, iv.class_id, score});
  }
  return out;
}

std::vector<Segment> localize(const dfc::DfcModel& dfc_model,
                              const efc::EfcModel& efc_model,
                              const dataio::FeatureSequence& x, const LcsConfig& cfg,
                              bool prune) {
  ChangePointSet points = dfc::detect_sequence(dfc_model, x);
  if (prune) points = lcs_prune(points, x.data, cfg);
  efc::CasMap cas = efc::cas_forward(efc_model, x);
  return extract_segments(points, cas, cfg);
}

}  // namespace lseg::boundary
