#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lseg/mat.hpp"
#include "lseg/segments.hpp"

namespace lseg::dataio {

// Per-snippet feature rows for one video.
struct FeatureSequence {
  std::string video_id;
  Mat data;  // T x F

  int snippet_count() const { return data.rows; }
  int feature_dim() const { return data.cols; }
};

class io_error : public std::runtime_error {
 public:
  enum class Kind { BadMagic, BadVersion, Truncated, Malformed, Io, Validation };

  io_error(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
  Kind kind;
};

// Binary feature file, little-endian:
//   "LSEG" | u32 version=1 | u32 T | u32 F | u64 reserved=0 | T*F float64 row-major
void write_features(const std::string& path, const FeatureSequence& fs);
FeatureSequence read_features(const std::string& path);

struct AnnotatedSegment {
  int start = 0;
  int end = 0;  // exclusive
  int class_id = 0;
};

struct VideoGroundTruth {
  std::string video_id;
  std::vector<AnnotatedSegment> segments;  // sorted by start, non-overlapping

  // Multi-hot video label, l1-normalized. Throws io_error(Validation) when
  // the video has no annotated segments.
  Mat label(int num_classes) const;
  // Segment endpoints excluding 0 and T.
  ChangePointSet change_points(int t_total) const;
};

struct GroundTruth {
  std::vector<VideoGroundTruth> videos;

  const VideoGroundTruth* find(const std::string& video_id) const;
};

// Text annotations: header line "video_id,start,end,class_id", one segment
// per following line. Overlapping or malformed rows raise io_error with the
// offending line number.
GroundTruth read_annotations(const std::string& path);
void write_annotations(const std::string& path, const GroundTruth& gt);

// Piecewise-stationary corpus generator. Each video alternates background
// and action regimes; regime r of class c emits prototype[c] + drift + noise.
struct GenSpec {
  uint64_t seed = 1;
  int num_videos = 128;
  int t_min = 80;
  int t_max = 200;
  int feature_dim = 16;
  int num_classes = 3;
  Mat prototypes;             // (C+1) x F, last row is background; derived when empty
  double noise_sigma = 0.1;
  double drift_amp = -1.0;    // negative selects the default 0.3 * noise_sigma
  int min_segments = 1;
  int max_segments = 3;
  double background_fraction = 0.5;
  int min_regime_len = 8;

  void validate() const;
  double effective_drift() const {
    return drift_amp < 0.0 ? 0.3 * noise_sigma : drift_amp;
  }
};

// Unit-norm prototypes on disjoint coordinate blocks (pairwise orthogonal).
Mat default_prototypes(int num_classes, int feature_dim);

struct CorpusVideo {
  FeatureSequence features;
  VideoGroundTruth truth;
};

std::vector<CorpusVideo> generate_corpus(const GenSpec& spec);

// Directory layout: <dir>/features/<video_id>.feat plus <dir>/annotations.csv
void write_corpus(const std::string& dir, const std::vector<CorpusVideo>& corpus);
std::vector<CorpusVideo> load_corpus(const std::string& dir);

// Comma-separated segment records: video_id,start,end,class_id,score
struct PredictedSegment {
  std::string video_id;
  Segment seg;
};

void write_segments(const std::string& path, const std::vector<PredictedSegment>& segs);
std::vector<PredictedSegment> read_segments(const std::string& path);

// Comma-separated change-point records: video_id,snippet
struct VideoChangePoints {
  std::string video_id;
  ChangePointSet points;
};

void write_change_points(const std::string& path, const std::vector<VideoChangePoints>& cps);
std::vector<VideoChangePoints> read_change_points(const std::string& path);

}  // namespace lseg::dataio
