#include "lseg/nn.hpp"

#include <cmath>

namespace lseg {

namespace {

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr double kTwoPi = 6.283185307179586476925287;

}  // namespace

Mat dense_forward(const DenseLayer& layer, const Mat& x) {
  if (!x.is_vector() || x.rows != layer.in_dim())
    throw shape_error("dense_forward: input dim " + std::to_string(x.rows) +
                      " does not match layer in-dim " +
                      std::to_string(layer.in_dim()));
  Mat y = matvec(layer.w, x);
  for (int i = 0; i < y.size(); ++i) {
    y[i] += layer.b[i];
    if (layer.act == Activation::ReLU && y[i] < 0.0) y[i] = 0.0;
  }
  return y;
}

Mat gru_step(const GruCell& cell, const Mat& x, const Mat& h) {
  if (!x.is_vector() || x.rows != cell.input_dim())
    throw shape_error("gru_step: input dim mismatch");
  if (!h.is_vector() || h.rows != cell.hidden_dim())
    throw shape_error("gru_step: hidden dim mismatch");
  Mat z = add(add(matvec(cell.wz, x), matvec(cell.uz, h)), cell.bz);
  Mat r = add(add(matvec(cell.wr, x), matvec(cell.ur, h)), cell.br);
  for (int i = 0; i < z.size(); ++i) {
    z[i] = sigmoid_scalar(z[i]);
    r[i] = sigmoid_scalar(r[i]);
  }
  Mat hc = add(add(matvec(cell.wh, x), matvec(cell.uh, hadamard(r, h))), cell.bh);
  Mat out(cell.hidden_dim(), 1);
  for (int i = 0; i < out.size(); ++i) {
    hc[i] = std::tanh(hc[i]);
    out[i] = (1.0 - z[i]) * h[i] + z[i] * hc[i];
  }
  return out;
}

DiagonalGaussian::DiagonalGaussian(Mat m, Mat lv) : mean(std::move(m)), log_var(std::move(lv)) {
  require_same_shape(mean, log_var, "DiagonalGaussian");
  if (!mean.is_vector()) throw shape_error("DiagonalGaussian: expected column vectors");
  for (int i = 0; i < log_var.size(); ++i)
    log_var[i] = std::min(kLogVarMax, std::max(kLogVarMin, log_var[i]));
}

DiagonalGaussian DiagonalGaussian::standard(int dim) {
  return DiagonalGaussian(Mat(dim, 1), Mat(dim, 1));
}

double gaussian_kl(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  require_same_shape(q.mean, p.mean, "gaussian_kl");
  double acc = 0.0;
  for (int i = 0; i < q.dim(); ++i) {
    double lq = q.log_var[i], lp = p.log_var[i];
    double dm = q.mean[i] - p.mean[i];
    acc += 0.5 * ((lp - lq) + std::exp(lq - lp) + dm * dm * std::exp(-lp) - 1.0);
  }
  return acc;
}

Mat reparam_sample(const DiagonalGaussian& g, const Mat& noise) {
  require_same_shape(g.mean, noise, "reparam_sample");
  Mat out = g.mean;
  for (int i = 0; i < out.size(); ++i)
    out[i] += std::exp(0.5 * g.log_var[i]) * noise[i];
  return out;
}

int ParamStore::add(const std::string& name, Mat* value) {
  if (by_name_.count(name)) throw shape_error("ParamStore: duplicate name " + name);
  if (by_ptr_.count(value)) throw shape_error("ParamStore: tensor registered twice: " + name);
  Slot s;
  s.name = name;
  s.value = value;
  s.grad = Mat(value->rows, value->cols);
  s.m = Mat(value->rows, value->cols);
  s.v = Mat(value->rows, value->cols);
  int idx = static_cast<int>(slots_.size());
  slots_.push_back(std::move(s));
  by_ptr_[value] = idx;
  by_name_[name] = idx;
  return idx;
}

int ParamStore::index_of(Mat* value) const {
  auto it = by_ptr_.find(value);
  return it == by_ptr_.end() ? -1 : it->second;
}

int ParamStore::checked_index(Mat* value) const {
  int i = index_of(value);
  if (i < 0) throw shape_error("ParamStore: tensor not registered");
  return i;
}

void ParamStore::zero_grads() {
  for (Slot& s : slots_)
    for (int i = 0; i < s.grad.size(); ++i) s.grad[i] = 0.0;
}

void ParamStore::reset_moments(Mat* value) {
  Slot& s = slots_[static_cast<size_t>(checked_index(value))];
  for (int i = 0; i < s.m.size(); ++i) {
    s.m[i] = 0.0;
    s.v[i] = 0.0;
  }
}

void ParamStore::adam_step(const AdamConfig& cfg) {
  step_ += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
  for (Slot& s : slots_) {
    Mat& w = *s.value;
    for (int i = 0; i < w.size(); ++i) {
      double g = s.grad[i];
      if (!std::isfinite(g))
        throw numeric_error("adam_step: non-finite gradient in " + s.name +
                            "[" + std::to_string(i) + "]");
      g += cfg.weight_decay * w[i];
      s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * g;
      s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = s.m[i] / bc1;
      double vhat = s.v[i] / bc2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  zero_grads();
}

Tape::Ref ParamBinder::use(Mat* value) {
  int idx = store_.index_of(value);
  if (idx < 0) throw shape_error("ParamBinder: tensor not registered");
  Tape::Ref& r = refs_[static_cast<size_t>(idx)];
  if (!r.valid()) r = tape_.leaf(*value, &store_.grad(idx));
  return r;
}

Tape::Ref dense_node(Tape& t, ParamBinder& p, DenseLayer& layer, Tape::Ref x) {
  Tape::Ref y = t.add(t.matvec(p.use(&layer.w), x), p.use(&layer.b));
  if (layer.act == Activation::ReLU) y = t.relu(y);
  return y;
}

Tape::Ref gru_node(Tape& t, ParamBinder& p, GruCell& cell, Tape::Ref x, Tape::Ref h) {
  Tape::Ref z = t.sigmoid(t.add(
      t.add(t.matvec(p.use(&cell.wz), x), t.matvec(p.use(&cell.uz), h)),
      p.use(&cell.bz)));
  Tape::Ref r = t.sigmoid(t.add(
      t.add(t.matvec(p.use(&cell.wr), x), t.matvec(p.use(&cell.ur), h)),
      p.use(&cell.br)));
  Tape::Ref hc = t.tanh_(t.add(
      t.add(t.matvec(p.use(&cell.wh), x), t.matvec(p.use(&cell.uh), t.mul(r, h))),
      p.use(&cell.bh)));
  // (1-z)*h + z*hc = h + z*(hc - h)
  return t.add(h, t.mul(z, t.sub(hc, h)));
}

GaussNode const_gauss_node(Tape& t, const DiagonalGaussian& g) {
  return GaussNode{t.input(g.mean), t.input(g.log_var)};
}

Tape::Ref kl_node(Tape& t, const GaussNode& q, const GaussNode& p) {
  Tape::Ref diff_lv = t.sub(p.log_var, q.log_var);
  Tape::Ref ratio = t.exp_(t.sub(q.log_var, p.log_var));
  Tape::Ref dm2 = t.square(t.sub(q.mean, p.mean));
  Tape::Ref maha = t.mul(dm2, t.exp_(t.scale(p.log_var, -1.0)));
  Tape::Ref terms = t.add_const(t.add(t.add(diff_lv, ratio), maha), -1.0);
  return t.scale(t.sum(terms), 0.5);
}

Tape::Ref reparam_node(Tape& t, const GaussNode& g, const Mat& noise) {
  Tape::Ref std_ = t.exp_(t.scale(g.log_var, 0.5));
  return t.add(g.mean, t.mul(std_, t.input(noise)));
}

Tape::Ref gaussian_nll_node(Tape& t, Tape::Ref mean, const Mat& x) {
  Tape::Ref diff = t.sub(t.input(x), mean);
  Tape::Ref sq = t.scale(t.sum(t.square(diff)), 0.5);
  return t.add_const(sq, 0.5 * x.size() * std::log(kTwoPi));
}

DiagonalGaussian gauss_value(const Tape& t, const GaussNode& g) {
  return DiagonalGaussian(t.val(g.mean), t.val(g.log_var));
}

DenseLayer make_dense(int in, int out, Activation act, Rng& rng) {
  DenseLayer l;
  l.w = Mat(out, in);
  double bound = std::sqrt(6.0 / (in + out));
  rng.fill_uniform(l.w, -bound, bound);
  l.b = Mat(out, 1);
  l.act = act;
  return l;
}

GruCell make_gru(int input, int hidden, Rng& rng) {
  GruCell c;
  double bw = std::sqrt(6.0 / (input + hidden));
  double bu = std::sqrt(6.0 / (hidden + hidden));
  auto mk = [&](Mat& m, int r, int cdim, double bound) {
    m = Mat(r, cdim);
    rng.fill_uniform(m, -bound, bound);
  };
  mk(c.wz, hidden, input, bw);
  mk(c.uz, hidden, hidden, bu);
  c.bz = Mat(hidden, 1);
  mk(c.wr, hidden, input, bw);
  mk(c.ur, hidden, hidden, bu);
  c.br = Mat(hidden, 1);
  mk(c.wh, hidden, input, bw);
  mk(c.uh, hidden, hidden, bu);
  c.bh = Mat(hidden, 1);
  rng.fill_uniform(c.bh, -0.5, 0.5);
  return c;
}

}  // namespace lseg
