#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "lseg/dataio.hpp"
#include "lseg/mat.hpp"
#include "lseg/nn.hpp"
#include "lseg/tape.hpp"

namespace lseg::efc {

// Snippet-local classifier with a (C+1)-way class activation head and a
// three-way attention head separating foreground, background and context.
// No temporal mixing: snippet order is irrelevant to the per-snippet outputs.
struct EfcConfig {
  int feature_dim = 16;
  int num_classes = 3;  // action classes; the background class is added internally
  std::vector<int> embed_widths = {64};

  void validate() const;
  int embed_out() const { return embed_widths.back(); }
};

enum class Branch { Foreground = 0, Background = 1, Context = 2 };

// Video-level label: non-negative, l1-normalized over the action classes.
struct VideoLabel {
  Mat y;  // C x 1

  explicit VideoLabel(Mat label);
  int num_classes() const { return y.rows; }
};

struct CasMap {
  Mat logits;     // (C+1) x T
  Mat attention;  // 3 x T, softmax per snippet column

  int snippet_count() const { return logits.cols; }
  int num_classes_with_bg() const { return logits.rows; }
};

struct EfcModel {
  EfcConfig cfg;
  std::vector<DenseLayer> embed;
  DenseLayer cas_head;   // embed_out -> C+1
  DenseLayer attn_head;  // embed_out -> 3
  ParamStore params;

  EfcModel(const EfcConfig& config, uint64_t seed);
  EfcModel(const EfcModel&) = delete;
  EfcModel& operator=(const EfcModel&) = delete;
};

std::unique_ptr<EfcModel> make_efc(const EfcConfig& config, uint64_t seed);

CasMap cas_forward(const EfcModel& m, const dataio::FeatureSequence& x);

// Attention-weighted activations pooled by top-k mean over time
// (k = max(1, T/8)), then softmax over the C+1 classes.
Mat branch_video_score(const CasMap& cas, Branch branch);

// Foreground: action entries, background zero. Background: background one.
// Context: action entries plus background one. Each renormalized to sum 1.
Mat make_branch_label(const VideoLabel& y, Branch branch);

// Sum of the three branch cross-entropies.
double efc_loss(EfcModel& m, const dataio::FeatureSequence& x, const VideoLabel& y);

Tape::Ref build_efc_loss(Tape& tape, EfcModel& m, const dataio::FeatureSequence& x,
                         const VideoLabel& y);

// Foreground attention row, length T, entries in [0, 1].
Mat foreground_attention(const EfcModel& m, const dataio::FeatureSequence& x);

// Argmax action class of the foreground branch score.
int predict_video_class(const EfcModel& m, const dataio::FeatureSequence& x);

struct TrainOptions {
  int epochs = 50;
  int batch_size = 16;
  double lr = 1e-4;
  double weight_decay = 5e-4;
  uint64_t seed = 1;
};

std::vector<double> train_efc(EfcModel& m, const std::vector<dataio::CorpusVideo>& corpus,
                              const TrainOptions& opts);

}  // namespace lseg::efc
