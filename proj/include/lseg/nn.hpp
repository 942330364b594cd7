#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "lseg/mat.hpp"
#include "lseg/rng.hpp"
#include "lseg/tape.hpp"

namespace lseg {

enum class Activation { Identity, ReLU };

struct DenseLayer {
  Mat w;  // out x in
  Mat b;  // out x 1
  Activation act = Activation::Identity;
  int in_dim() const { return w.cols; }
  int out_dim() const { return w.rows; }
};

// y = act(W x + b)
Mat dense_forward(const DenseLayer& layer, const Mat& x);

struct GruCell {
  Mat wz, uz, bz;  // update gate
  Mat wr, ur, br;  // reset gate
  Mat wh, uh, bh;  // candidate
  int input_dim() const { return wz.cols; }
  int hidden_dim() const { return wz.rows; }
};

// z = sigma(Wz x + Uz h + bz), r = sigma(Wr x + Ur h + br),
// hc = tanh(Wh x + Uh (r*h) + bh), h' = (1-z)*h + z*hc
Mat gru_step(const GruCell& cell, const Mat& x, const Mat& h);

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

// Diagonal Gaussian held as mean and log-variance. log_var is clamped to
// [-10, 10] on construction.
struct DiagonalGaussian {
  Mat mean;
  Mat log_var;

  DiagonalGaussian() = default;
  DiagonalGaussian(Mat m, Mat lv);

  int dim() const { return mean.size(); }
  static DiagonalGaussian standard(int dim);
};

// KL(q || p) for diagonal Gaussians; non-negative up to roundoff.
double gaussian_kl(const DiagonalGaussian& q, const DiagonalGaussian& p);

// mean + exp(log_var / 2) * noise
Mat reparam_sample(const DiagonalGaussian& g, const Mat& noise);

// Registry over externally owned parameter tensors. Holds the matching
// gradient and Adam moment slots plus the step counter. Addresses must stay
// stable for the registry's lifetime.
class ParamStore {
 public:
  struct AdamConfig {
    double lr = 1e-4;
    double weight_decay = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  int add(const std::string& name, Mat* value);
  int count() const { return static_cast<int>(slots_.size()); }
  int index_of(Mat* value) const;
  const std::string& name(int i) const { return slots_[static_cast<size_t>(i)].name; }
  Mat& value(int i) { return *slots_[static_cast<size_t>(i)].value; }
  const Mat& value(int i) const { return *slots_[static_cast<size_t>(i)].value; }
  Mat& grad(int i) { return slots_[static_cast<size_t>(i)].grad; }
  Mat& grad_of(Mat* value) { return grad(checked_index(value)); }
  void zero_grads();
  // Clears the Adam moments of one tensor; used after re-drawing its values.
  void reset_moments(Mat* value);
  int64_t step() const { return step_; }

  // Bias-corrected Adam with weight decay folded into the gradient as an L2
  // term before the moment update. Zeroes gradients afterwards. Throws
  // numeric_error naming the parameter on a non-finite gradient.
  void adam_step(const AdamConfig& cfg);

 private:
  struct Slot {
    std::string name;
    Mat* value;
    Mat grad, m, v;
  };
  int checked_index(Mat* value) const;
  std::vector<Slot> slots_;
  std::unordered_map<Mat*, int> by_ptr_;
  std::unordered_map<std::string, int> by_name_;
  int64_t step_ = 0;
};

// One tape leaf per registered tensor, created on first use.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, ParamStore& store)
      : tape_(tape), store_(store), refs_(static_cast<size_t>(store.count())) {}

  Tape::Ref use(Mat* value);

 private:
  Tape& tape_;
  ParamStore& store_;
  std::vector<Tape::Ref> refs_;
};

// Tape composites mirroring the plain kernels.
Tape::Ref dense_node(Tape& t, ParamBinder& p, DenseLayer& layer, Tape::Ref x);
Tape::Ref gru_node(Tape& t, ParamBinder& p, GruCell& cell, Tape::Ref x, Tape::Ref h);

struct GaussNode {
  Tape::Ref mean;
  Tape::Ref log_var;
};

GaussNode const_gauss_node(Tape& t, const DiagonalGaussian& g);
Tape::Ref kl_node(Tape& t, const GaussNode& q, const GaussNode& p);
Tape::Ref reparam_node(Tape& t, const GaussNode& g, const Mat& noise);
// Negative log-likelihood of x under N(mean, I): 0.5*|x-mean|^2 + dim/2*log(2*pi)
Tape::Ref gaussian_nll_node(Tape& t, Tape::Ref mean, const Mat& x);

DiagonalGaussian gauss_value(const Tape& t, const GaussNode& g);

DenseLayer make_dense(int in, int out, Activation act, Rng& rng);
GruCell make_gru(int input, int hidden, Rng& rng);

}  // namespace lseg
