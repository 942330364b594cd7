#include "lseg/efc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lseg/dfc.hpp"
#include "lseg/rng.hpp"

namespace lseg::efc {

namespace {

constexpr double kLogFloor = 1e-12;

Mat softmax_plain(const Mat& x) {
  Mat y = x;
  double mx = y[0];
  for (int i = 1; i < y.size(); ++i) mx = std::max(mx, y[i]);
  double z = 0.0;
  for (int i = 0; i < y.size(); ++i) {
    y[i] = std::exp(y[i] - mx);
    z += y[i];
  }
  for (int i = 0; i < y.size(); ++i) y[i] /= z;
  return y;
}

int top_k_of(int t) { return std::max(1, t / 8); }

}  // namespace

void EfcConfig::validate() const {
  if (feature_dim < 1 || num_classes < 1)
    throw shape_error("efc config: dimensions must be >= 1");
  if (embed_widths.empty()) throw shape_error("efc config: empty embed stack");
  for (int w : embed_widths)
    if (w < 1) throw shape_error("efc config: bad embed width");
}

VideoLabel::VideoLabel(Mat label) : y(std::move(label)) {
  if (!y.is_vector() || y.rows < 1) throw shape_error("VideoLabel: expected column vector");
  double total = 0.0;
  for (int i = 0; i < y.size(); ++i) {
    if (y[i] < 0.0) throw shape_error("VideoLabel: negative entry");
    total += y[i];
  }
  if (std::fabs(total - 1.0) > 1e-9)
    throw shape_error("VideoLabel: entries must sum to 1");
}

EfcModel::EfcModel(const EfcConfig& config, uint64_t seed) : cfg(config) {
  cfg.validate();
  Rng rng(seed);
  int d = cfg.feature_dim;
  for (size_t i = 0; i < cfg.embed_widths.size(); ++i) {
    embed.push_back(make_dense(d, cfg.embed_widths[i], Activation::ReLU, rng));
    d = cfg.embed_widths[i];
  }
  cas_head = make_dense(d, cfg.num_classes + 1, Activation::Identity, rng);
  attn_head = make_dense(d, 3, Activation::Identity, rng);

  for (size_t i = 0; i < embed.size(); ++i) {
    params.add("embed." + std::to_string(i) + ".w", &embed[i].w);
    params.add("embed." + std::to_string(i) + ".b", &embed[i].b);
  }
  params.add("cas.w", &cas_head.w);
  params.add("cas.b", &cas_head.b);
  params.add("attn.w", &attn_head.w);
  params.add("attn.b", &attn_head.b);
}

std::unique_ptr<EfcModel> make_efc(const EfcConfig& config, uint64_t seed) {
  return std::make_unique<EfcModel>(config, seed);
}

CasMap cas_forward(const EfcModel& m, const dataio::FeatureSequence& x) {
  if (x.feature_dim() != m.cfg.feature_dim)
    throw shape_error("cas_forward: feature dim mismatch");
  int t_total = x.snippet_count();
  CasMap cas;
  cas.logits = Mat(m.cfg.num_classes + 1, t_total);
  cas.attention = Mat(3, t_total);
  for (int t = 0; t < t_total; ++t) {
    Mat h = row_of(x.data, t);
    for (const DenseLayer& l : m.embed) h = dense_forward(l, h);
    Mat logits = dense_forward(m.cas_head, h);
    Mat attn = softmax_plain(dense_forward(m.attn_head, h));
    for (int c = 0; c < logits.size(); ++c) cas.logits.at(c, t) = logits[c];
    for (int b = 0; b < 3; ++b) cas.attention.at(b, t) = attn[b];
  }
  if (!cas.logits.all_finite() || !cas.attention.all_finite())
    throw numeric_error("cas_forward: non-finite activations");
  return cas;
}

Mat branch_video_score(const CasMap& cas, Branch branch) {
  int t_total = cas.snippet_count();
  int classes = cas.num_classes_with_bg();
  if (t_total < 1) throw shape_error("branch_video_score: empty map");
  int k = top_k_of(t_total);
  int row = static_cast<int>(branch);
  Mat pooled(classes, 1);
  std::vector<double> weighted(static_cast<size_t>(t_total));
  for (int c = 0; c < classes; ++c) {
    for (int t = 0; t < t_total; ++t)
      weighted[static_cast<size_t>(t)] = cas.attention.at(row, t) * cas.logits.at(c, t);
    std::stable_sort(weighted.begin(), weighted.end(), std::greater<double>());
    double s = 0.0;
    for (int i = 0; i < k; ++i) s += weighted[static_cast<size_t>(i)];
    pooled[c] = s / k;
  }
  return softmax_plain(pooled);
}

Mat make_branch_label(const VideoLabel& y, Branch branch) {
  int c_total = y.num_classes() + 1;
  Mat label(c_total, 1);
  switch (branch) {
    case Branch::Foreground:
      for (int c = 0; c < y.num_classes(); ++c) label[c] = y.y[c];
      label[c_total - 1] = 0.0;
      break;
    case Branch::Background:
      label[c_total - 1] = 1.0;
      break;
    case Branch::Context:
      for (int c = 0; c < y.num_classes(); ++c) label[c] = y.y[c];
      label[c_total - 1] = 1.0;
      break;
  }
  double total = 0.0;
  for (int i = 0; i < label.size(); ++i) total += label[i];
  for (int i = 0; i < label.size(); ++i) label[i] /= total;
  return label;
}

Tape::Ref build_efc_loss(Tape& tape, EfcModel& m, const dataio::FeatureSequence& x,
                         const VideoLabel& y) {
  if (x.feature_dim() != m.cfg.feature_dim)
    throw shape_error("build_efc_loss: feature dim mismatch");
  if (y.num_classes() != m.cfg.num_classes)
    throw shape_error("build_efc_loss: label class count mismatch");
  int t_total = x.snippet_count();
  int classes = m.cfg.num_classes + 1;
  int k = top_k_of(t_total);

  ParamBinder binder(tape, m.params);
  std::vector<Tape::Ref> cas_nodes;     // per snippet, (C+1)-vector
  std::vector<Tape::Ref> attn_nodes;    // per snippet, 3-vector softmax
  cas_nodes.reserve(static_cast<size_t>(t_total));
  attn_nodes.reserve(static_cast<size_t>(t_total));
  for (int t = 0; t < t_total; ++t) {
    Tape::Ref h = tape.input(row_of(x.data, t));
    for (DenseLayer& l : m.embed) h = dense_node(tape, binder, l, h);
    cas_nodes.push_back(dense_node(tape, binder, m.cas_head, h));
    attn_nodes.push_back(tape.softmax(dense_node(tape, binder, m.attn_head, h)));
  }

  Tape::Ref loss;
  for (int b = 0; b < 3; ++b) {
    std::vector<Tape::Ref> pooled;
    pooled.reserve(static_cast<size_t>(classes));
    for (int c = 0; c < classes; ++c) {
      std::vector<Tape::Ref> weighted;
      weighted.reserve(static_cast<size_t>(t_total));
      for (int t = 0; t < t_total; ++t) {
        Tape::Ref logit = tape.slice(cas_nodes[static_cast<size_t>(t)], c, 1);
        Tape::Ref weight = tape.slice(attn_nodes[static_cast<size_t>(t)], b, 1);
        weighted.push_back(tape.mul(logit, weight));
      }
      pooled.push_back(tape.topk_mean(tape.concat(weighted), k));
    }
    Tape::Ref probs = tape.softmax(tape.concat(pooled));
    Mat label = make_branch_label(y, static_cast<Branch>(b));
    Tape::Ref ce = tape.scale(
        tape.sum(tape.mul(tape.input(label), tape.log_eps(probs, kLogFloor))), -1.0);
    loss = loss.valid() ? tape.add(loss, ce) : ce;
  }
  return loss;
}

double efc_loss(EfcModel& m, const dataio::FeatureSequence& x, const VideoLabel& y) {
  Tape tape;
  return tape.scalar(build_efc_loss(tape, m, x, y));
}

Mat foreground_attention(const EfcModel& m, const dataio::FeatureSequence& x) {
  CasMap cas = cas_forward(m, x);
  Mat out(cas.snippet_count(), 1);
  for (int t = 0; t < cas.snippet_count(); ++t)
    out[t] = cas.attention.at(static_cast<int>(Branch::Foreground), t);
  return out;
}

int predict_video_class(const EfcModel& m, const dataio::FeatureSequence& x) {
  Mat probs = branch_video_score(cas_forward(m, x), Branch::Foreground);
  int best = 0;
  for (int c = 1; c < m.cfg.num_classes; ++c)
    if (probs[c] > probs[best]) best = c;
  return best;
}

std::vector<double> train_efc(EfcModel& m, const std::vector<dataio::CorpusVideo>& corpus,
                              const TrainOptions& opts) {
  if (corpus.empty()) throw shape_error("train_efc: empty corpus");
  if (opts.epochs < 1 || opts.batch_size < 1)
    throw shape_error("train_efc: bad training options");

  ParamStore::AdamConfig adam;
  adam.lr = opts.lr;
  adam.weight_decay = opts.weight_decay;

  std::vector<VideoLabel> labels;
  labels.reserve(corpus.size());
  for (const dataio::CorpusVideo& v : corpus)
    labels.emplace_back(v.truth.label(m.cfg.num_classes));

  Rng shuffle_rng(opts.seed ^ 0x7f4a7c15ull);
  std::vector<int> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> trace;
  trace.reserve(static_cast<size_t>(opts.epochs));
  Tape tape;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    std::vector<double> per_video(corpus.size(), 0.0);
    size_t done = 0;
    while (done < order.size()) {
      size_t batch_end = std::min(done + static_cast<size_t>(opts.batch_size), order.size());
      int batch_count = static_cast<int>(batch_end - done);
      for (size_t idx = done; idx < batch_end; ++idx) {
        int vid = order[idx];
        tape.clear();
        Tape::Ref loss = build_efc_loss(tape, m, corpus[static_cast<size_t>(vid)].features,
                                        labels[static_cast<size_t>(vid)]);
        per_video[static_cast<size_t>(vid)] = tape.scalar(loss);
        tape.backward(tape.scale(loss, 1.0 / batch_count));
      }
      try {
        m.params.adam_step(adam);
      } catch (const numeric_error& e) {
        throw dfc::training_error(std::string("train_efc diverged: ") + e.what(), trace);
      }
      done = batch_end;
    }
    // Fixed reduction order keeps the trace independent of the shuffle.
    double epoch_sum = 0.0;
    for (double v : per_video) epoch_sum += v;
    double epoch_mean = epoch_sum / static_cast<double>(corpus.size());
    if (!std::isfinite(epoch_mean))
      throw dfc::training_error("train_efc: non-finite epoch loss", trace);
    trace.push_back(epoch_mean);
  }
  return trace;
}

}  // namespace lseg::efc
