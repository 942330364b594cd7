#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "lseg/boundary.hpp"
#include "lseg/rng.hpp"

using namespace lseg;
using namespace lseg::boundary;

namespace {

// Exhaustive subsequence search over the shorter list.
int lcs_brute(const std::vector<int>& a, const std::vector<int>& b) {
  const std::vector<int>& s = a.size() <= b.size() ? a : b;
  const std::vector<int>& l = a.size() <= b.size() ? b : a;
  int best = 0;
  int n = static_cast<int>(s.size());
  for (int mask = 0; mask < (1 << n); ++mask) {
    std::vector<int> cand;
    for (int i = 0; i < n; ++i)
      if (mask & (1 << i)) cand.push_back(s[static_cast<size_t>(i)]);
    size_t j = 0;
    for (int x : l) {
      if (j < cand.size() && cand[j] == x) ++j;
    }
    if (j == cand.size()) best = std::max(best, static_cast<int>(cand.size()));
  }
  return best;
}

// Features with one prototype per labelled block.
Mat block_features(const std::vector<std::pair<int, int>>& runs, int f) {
  int t_total = 0;
  for (const auto& [len, proto] : runs) t_total += len;
  Mat data(t_total, f);
  int pos = 0;
  for (const auto& [len, proto] : runs) {
    for (int t = 0; t < len; ++t) data.at(pos + t, proto % f) = 1.0;
    pos += len;
  }
  return data;
}

efc::CasMap constant_cas(int t_total, int classes_with_bg, double fg_attention) {
  efc::CasMap cas;
  cas.logits = Mat(classes_with_bg, t_total);
  cas.attention = Mat(3, t_total);
  for (int t = 0; t < t_total; ++t) {
    cas.attention.at(0, t) = fg_attention;
    cas.attention.at(1, t) = 1.0 - fg_attention;
  }
  return cas;
}

}  // namespace

TEST_CASE("classic_lcs basics") {
  std::vector<int> a = {3, 1, 4, 1, 5};
  CHECK(classic_lcs(a, a) == 5);
  CHECK(classic_lcs(a, {9, 8, 7}) == 0);
  CHECK(classic_lcs({1, 2, 3, 4}, {2, 4}) == 2);
  CHECK(classic_lcs({}, a) == 0);
}

TEST_CASE("classic_lcs matches brute force on random lists") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    int n = rng.uniform_int(0, 9), m = rng.uniform_int(0, 9);
    std::vector<int> a, b;
    for (int i = 0; i < n; ++i) a.push_back(rng.uniform_int(0, 3));
    for (int i = 0; i < m; ++i) b.push_back(rng.uniform_int(0, 3));
    int fast = classic_lcs(a, b);
    CHECK(fast == lcs_brute(a, b));
    CHECK(fast <= std::min(n, m));
    CHECK(fast == classic_lcs(b, a));
  }
}

TEST_CASE("lcs_prune is the identity below three points") {
  LcsConfig cfg;
  Mat features = block_features({{30, 0}, {30, 1}}, 8);
  ChangePointSet two{{10, 30}};
  ChangePointSet out = lcs_prune(two, features, cfg);
  CHECK(out.points == two.points);
  ChangePointSet none{};
  CHECK(lcs_prune(none, features, cfg).points.empty());
}

TEST_CASE("lcs_prune deletes a point inside a homogeneous run") {
  LcsConfig cfg;
  // One prototype from 0..60, second prototype afterwards. The middle point
  // at 30 is redundant; 60 is genuine.
  Mat features = block_features({{60, 0}, {30, 1}}, 8);
  ChangePointSet pts{{10, 30, 60}};
  ChangePointSet out = lcs_prune(pts, features, cfg);
  CHECK(out.points == std::vector<int>{10, 60});
}

TEST_CASE("lcs_prune keeps a genuine boundary between orthogonal regimes") {
  LcsConfig cfg;
  Mat features = block_features({{30, 0}, {30, 1}, {30, 2}}, 8);
  // In the triple (20, 30, 60), point 30 separates orthogonal prototypes, so
  // the flanking runs share no matches and 30 survives.
  ChangePointSet pts{{20, 30, 60}};
  ChangePointSet out = lcs_prune(pts, features, cfg);
  CHECK(out.points == std::vector<int>{20, 30, 60});

  // A redundant middle point between two genuine ones is removed.
  ChangePointSet redundant{{30, 45, 60}};
  ChangePointSet pruned = lcs_prune(redundant, features, cfg);
  CHECK(pruned.points == std::vector<int>{30, 60});
}

TEST_CASE("lcs_prune output is a subset of its input") {
  Rng rng(22);
  for (int trial = 0; trial < 30; ++trial) {
    int f = 6;
    std::vector<std::pair<int, int>> runs;
    int n_runs = rng.uniform_int(2, 5);
    for (int i = 0; i < n_runs; ++i) runs.push_back({rng.uniform_int(8, 20), i});
    Mat features = block_features(runs, f);
    std::vector<int> pts;
    int n_pts = rng.uniform_int(0, 8);
    for (int i = 0; i < n_pts; ++i) pts.push_back(rng.uniform_int(0, features.rows - 1));
    ChangePointSet in = ChangePointSet::from(pts, features.rows);
    ChangePointSet out = lcs_prune(in, features, LcsConfig{});
    CHECK(std::includes(in.points.begin(), in.points.end(), out.points.begin(),
                        out.points.end()));
    CHECK(std::is_sorted(out.points.begin(), out.points.end()));
  }
}

TEST_CASE("extract_segments drops everything when foreground attention is zero") {
  efc::CasMap cas = constant_cas(40, 3, 0.0);
  ChangePointSet pts{{20}};
  CHECK(extract_segments(pts, cas, LcsConfig{}).empty());
}

TEST_CASE("extract_segments hand-constructed single action") {
  int t_total = 100;
  efc::CasMap cas;
  cas.logits = Mat(3, t_total);
  cas.attention = Mat(3, t_total);
  for (int t = 0; t < t_total; ++t) {
    bool action = t < 50;
    cas.attention.at(0, t) = action ? 1.0 : 0.0;
    cas.attention.at(1, t) = action ? 0.0 : 1.0;
    cas.logits.at(0, t) = action ? 12.0 : 0.0;
    cas.logits.at(2, t) = action ? 0.0 : 12.0;
  }
  ChangePointSet pts{{50}};
  std::vector<Segment> segs = extract_segments(pts, cas, LcsConfig{});
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].start == 0);
  CHECK(segs[0].end == 50);
  CHECK(segs[0].class_id == 0);
  CHECK(segs[0].score > 0.99);
}

TEST_CASE("adjacent kept intervals of one class merge") {
  int t_total = 60;
  efc::CasMap cas = constant_cas(t_total, 3, 1.0);
  for (int t = 0; t < t_total; ++t) cas.logits.at(1, t) = 5.0;
  ChangePointSet pts{{30}};
  std::vector<Segment> segs = extract_segments(pts, cas, LcsConfig{});
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].start == 0);
  CHECK(segs[0].end == 60);
  CHECK(segs[0].class_id == 1);

  // Different classes on the two sides stay separate.
  efc::CasMap split = constant_cas(t_total, 3, 1.0);
  for (int t = 0; t < 30; ++t) split.logits.at(0, t) = 5.0;
  for (int t = 30; t < t_total; ++t) split.logits.at(1, t) = 5.0;
  std::vector<Segment> two = extract_segments(pts, split, LcsConfig{});
  REQUIRE(two.size() == 2);
  CHECK(two[0].class_id == 0);
  CHECK(two[1].class_id == 1);
  CHECK(two[0].end == two[1].start);
}

TEST_CASE("empty change-point set yields at most one whole-video candidate") {
  efc::CasMap cas = constant_cas(25, 3, 1.0);
  for (int t = 0; t < 25; ++t) cas.logits.at(0, t) = 3.0;
  std::vector<Segment> segs = extract_segments(ChangePointSet{}, cas, LcsConfig{});
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].start == 0);
  CHECK(segs[0].end == 25);
}

TEST_CASE("raising the foreground threshold is a monotone filter") {
  // The filter keeps fewer intervals as the threshold rises, so the covered
  // snippet mass shrinks and segment count stays below the kept-interval
  // count. (The raw segment count itself is not monotone: dropping a middle
  // interval can split one merged segment into two.)
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    int t_total = rng.uniform_int(24, 60);
    efc::CasMap cas;
    cas.logits = Mat(4, t_total);
    cas.attention = Mat(3, t_total);
    for (int t = 0; t < t_total; ++t) {
      double a = rng.uniform(0.0, 1.0), b = rng.uniform(0.0, 1.0 - a);
      cas.attention.at(0, t) = a;
      cas.attention.at(1, t) = b;
      cas.attention.at(2, t) = 1.0 - a - b;
      for (int c = 0; c < 4; ++c) cas.logits.at(c, t) = rng.normal();
    }
    std::vector<int> pts;
    for (int i = rng.uniform_int(0, 5); i > 0; --i)
      pts.push_back(rng.uniform_int(1, t_total - 1));
    ChangePointSet cps = ChangePointSet::from(pts, t_total);

    auto kept_intervals = [&](double thr) {
      std::vector<int> bounds{0};
      for (int p : cps.points) bounds.push_back(p);
      bounds.push_back(t_total);
      bounds.erase(std::unique(bounds.begin(), bounds.end()), bounds.end());
      int kept = 0;
      for (size_t i = 0; i + 1 < bounds.size(); ++i) {
        double mean_fg = 0.0;
        for (int t = bounds[i]; t < bounds[i + 1]; ++t) mean_fg += cas.attention.at(0, t);
        mean_fg /= (bounds[i + 1] - bounds[i]);
        if (mean_fg >= thr) ++kept;
      }
      return kept;
    };

    int prev_cover = -1;
    for (double thr : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      LcsConfig cfg;
      cfg.fg_threshold = thr;
      std::vector<Segment> segs = extract_segments(cps, cas, cfg);
      int cover = 0;
      for (const Segment& s : segs) cover += s.end - s.start;
      if (prev_cover >= 0) CHECK(cover <= prev_cover);
      prev_cover = cover;
      CHECK(static_cast<int>(segs.size()) <= kept_intervals(thr));
    }
  }
}

TEST_CASE("segments are disjoint and delimited by change-points or endpoints") {
  Rng rng(24);
  for (int trial = 0; trial < 20; ++trial) {
    int t_total = rng.uniform_int(20, 50);
    efc::CasMap cas;
    cas.logits = Mat(3, t_total);
    cas.attention = Mat(3, t_total);
    for (int t = 0; t < t_total; ++t) {
      double a = rng.uniform(0.0, 1.0), b = rng.uniform(0.0, 1.0 - a);
      cas.attention.at(0, t) = a;
      cas.attention.at(1, t) = b;
      cas.attention.at(2, t) = 1.0 - a - b;
      for (int c = 0; c < 3; ++c) cas.logits.at(c, t) = rng.normal();
    }
    std::vector<int> pts;
    for (int i = rng.uniform_int(0, 4); i > 0; --i)
      pts.push_back(rng.uniform_int(1, t_total - 1));
    ChangePointSet cps = ChangePointSet::from(pts, t_total);
    std::vector<Segment> segs = extract_segments(cps, cas, LcsConfig{});
    for (size_t i = 0; i < segs.size(); ++i) {
      validate_segment(segs[i], t_total, 2);
      bool start_ok = segs[i].start == 0 || cps.contains(segs[i].start);
      bool end_ok = segs[i].end == t_total || cps.contains(segs[i].end);
      CHECK(start_ok);
      CHECK(end_ok);
      if (i > 0) CHECK(segs[i].start >= segs[i - 1].end);
    }
  }
}

TEST_CASE("localize is deterministic") {
  auto dfc_model = dfc::make_dfc(
      [] {
        dfc::DfcConfig cfg;
        cfg.feature_dim = 8;
        cfg.encoder_widths = {16, 12};
        cfg.decoder_widths = {16, 12};
        cfg.latent1 = 6;
        cfg.latent2 = 6;
        cfg.gru_hidden = 8;
        cfg.head_hidden = 8;
        return cfg;
      }(),
      31);
  efc::EfcConfig ecfg;
  ecfg.feature_dim = 8;
  ecfg.num_classes = 2;
  ecfg.embed_widths = {12};
  auto efc_model = efc::make_efc(ecfg, 32);

  Rng rng(33);
  dataio::FeatureSequence x;
  x.video_id = "probe";
  x.data = Mat(60, 8);
  rng.fill_normal(x.data, 0.5);

  auto a = localize(*dfc_model, *efc_model, x, LcsConfig{});
  auto b = localize(*dfc_model, *efc_model, x, LcsConfig{});
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].start == b[i].start);
    CHECK(a[i].end == b[i].end);
    CHECK(a[i].class_id == b[i].class_id);
    CHECK(a[i].score == b[i].score);
  }
}
