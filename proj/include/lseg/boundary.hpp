#pragma once

#include <functional>
#include <vector>

#include "lseg/dataio.hpp"
#include "lseg/dfc.hpp"
#include "lseg/efc.hpp"
#include "lseg/segments.hpp"

namespace lseg::boundary {

struct LcsConfig {
  double cosine_threshold = 0.65;  // snippet match threshold
  double redundancy_ratio = 0.5;   // |LCS| / |l_BC| at or above which B is dropped
  double fg_threshold = 0.5;       // mean foreground attention needed to keep an interval

  void validate() const;
};

// Dynamic-programming longest common subsequence length between two abstract
// lists of sizes n and m under the given match predicate.
int classic_lcs(int n, int m, const std::function<bool(int, int)>& match);
int classic_lcs(const std::vector<int>& a, const std::vector<int>& b);

// Deletes redundant points from adjacent change-point triples (A, B, C):
// the snippet runs flanking B, [A, B) and [B, C), are LCS-matched under
// cosine similarity >= cosine_threshold, and B is dropped when
// |LCS| / |[B, C)| >= redundancy_ratio. Processes left to right over the
// mutating set; output is a subset of the input.
ChangePointSet lcs_prune(const ChangePointSet& points, const Mat& features,
                         const LcsConfig& cfg);

// Change-point intervals (with implicit endpoints 0 and T) are kept when mean
// foreground attention reaches fg_threshold, classified by the attention-
// weighted activations, scored by mean in-segment class probability, and
// merged with same-class contiguous neighbours.
std::vector<Segment> extract_segments(const ChangePointSet& points,
                                      const efc::CasMap& cas, const LcsConfig& cfg);

// detect_sequence -> lcs_prune -> cas_forward -> extract_segments
std::vector<Segment> localize(const dfc::DfcModel& dfc_model,
                              const efc::EfcModel& efc_model,
                              const dataio::FeatureSequence& x, const LcsConfig& cfg,
                              bool prune = true);

}  // namespace lseg::boundary
