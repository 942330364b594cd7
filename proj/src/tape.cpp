#include "lseg/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lseg {

Tape::Ref Tape::push(Mat v, std::function<void(Tape&, int)> back) {
  Node n;
  n.val = std::move(v);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Ref{static_cast<int>(nodes_.size()) - 1};
}

Tape::Ref Tape::leaf(Mat v, Mat* grad_sink) {
  Ref r = push(std::move(v), nullptr);
  nodes_[r.i].sink = grad_sink;
  return r;
}

double Tape::scalar(Ref r) const {
  const Mat& m = val(r);
  if (m.size() != 1) throw shape_error("Tape::scalar: node is not 1x1");
  return m[0];
}

Tape::Ref Tape::matvec(Ref w, Ref x) {
  Mat y = lseg::matvec(val(w), val(x));
  int wi = w.i, xi = x.i;
  return push(std::move(y), [wi, xi](Tape& t, int self) {
    const Mat& gy = t.g(self);
    const Mat& wv = t.v(wi);
    const Mat& xv = t.v(xi);
    Mat& gw = t.g(wi);
    Mat& gx = t.g(xi);
    for (int r = 0; r < wv.rows; ++r) {
      double gr = gy[r];
      if (gr == 0.0) continue;
      const double* wr = wv.a.data() + static_cast<size_t>(r) * wv.cols;
      double* gwr = gw.a.data() + static_cast<size_t>(r) * wv.cols;
      for (int c = 0; c < wv.cols; ++c) {
        gwr[c] += gr * xv[c];
        gx[c] += gr * wr[c];
      }
    }
  });
}

Tape::Ref Tape::add(Ref a, Ref b) {
  Mat y = lseg::add(val(a), val(b));
  int ai = a.i, bi = b.i;
  return push(std::move(y), [ai, bi](Tape& t, int self) {
    const Mat& gy = t.g(self);
    Mat& ga = t.g(ai);
    Mat& gb = t.g(bi);
    for (int i = 0; i < gy.size(); ++i) {
      ga[i] += gy[i];
      gb[i] += gy[i];
    }
  });
}

Tape::Ref Tape::sub(Ref a, Ref b) {
  Mat y = lseg::sub(val(a), val(b));
  int ai = a.i, bi = b.i;
  return push(std::move(y), [ai, bi](Tape& t, int self) {
    const Mat& gy = t.g(self);
    Mat& ga = t.g(ai);
    Mat& gb = t.g(bi);
    for (int i = 0; i < gy.size(); ++i) {
      ga[i] += gy[i];
      gb[i] -= gy[i];
    }
  });
}

Tape::Ref Tape::mul(Ref a, Ref b) {
  Mat y = hadamard(val(a), val(b));
  int ai = a.i, bi = b.i;
  return push(std::move(y), [ai, bi](Tape& t, int self) {
    const Mat& gy = t.g(self);
    const Mat& av = t.v(ai);
    const Mat& bv = t.v(bi);
    Mat& ga = t.g(ai);
    Mat& gb = t.g(bi);
    for (int i = 0; i < gy.size(); ++i) {
      ga[i] += gy[i] * bv[i];
      gb[i] += gy[i] * av[i];
    }
  });
}

Tape::Ref Tape::mul_scalar(Ref vref, Ref s) {
  if (val(s).size() != 1) throw shape_error("mul_scalar: scalar must be 1x1");
  Mat y = lseg::scale(val(vref), val(s)[0]);
  int vi = vref.i, si = s.i;
  return push(std::move(y), [vi, si](Tape& t, int self) {
    const Mat& gy = t.g(self);
    const Mat& vv = t.v(vi);
    double sv = t.v(si)[0];
    Mat& gv = t.g(vi);
    Mat& gs = t.g(si);
    double acc = 0.0;
    for (int i = 0; i < gy.size(); ++i) {
      gv[i] += gy[i] * sv;
      acc += gy[i] * vv[i];
    }
    gs[0] += acc;
  });
}

Tape::Ref Tape::scale(Ref a, double k) {
  Mat y = lseg::scale(val(a), k);
  int ai = a.i;
  return push(std::move(y), [ai, k](Tape& t, int self) {
    const Mat& gy = t.g(self);
    Mat& ga = t.g(ai);
    for (int i = 0; i < gy.size(); ++i) ga[i] += k * gy[i];
  });
}

Tape::Ref Tape::add_const(Ref a, double k) {
  Mat y = val(a);
  for (int i = 0; i < y.size(); ++i) y[i] += k;
  int ai = a.i;
  return push(std::move(y), [ai](Tape& t, int self) {
    const Mat& gy = t.g(self);
    Mat& ga = t.g(ai);
    for (int i = 0; i < gy.size(); ++i) ga[i] += gy[i];
  });
}

Tape::Ref Tape::relu(Ref a) {
  Mat y = val(a);
  for (int i = 0; i < y.size(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
  int ai = a.i;
  return push(std::move(y), [ai](Tape& t, int self) {
    const Mat& gy = t.g(self);
    const Mat& av = t.v(ai);
    Mat& ga = t.g(ai);
    for (int i = 0; i < gy.size(); ++i)
      if (av[i] > 0.0) ga[i] += gy[i];
  });
}

Tape::Ref Tape::sigmoid(Ref a) {
  Mat y = val(a);
  for (int i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
  int ai = a.i;
  return push(std::move(y), [ai](Tape& t, int self) {
    const Mat& gy = t.g(self);
    const Mat& yv = t.v(self);
    Mat& ga = t.g(ai);
    for (int i = 0; i < gy.size(); ++i) ga[i] += gy[i] * yv[i] * (1.0 - yv[i]);
  });
}

Tape::Ref Tape::tanh_(Ref a) {
  Mat y = val(a);
  for (int i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i]);
  int ai = a.i;
  return push(std::move(y), [ai](Tape& t, int self) {
    const Mat& gy = t.g(self);
    const Mat& yv = t.v(self);
    Mat& ga = t.g(ai);
    for (int i = 0; i < gy.size(); ++i) ga[i] += gy[i] * (1.0 - yv[i] * yv[i]);
  });
}

Tape::Ref Tape::exp_(Ref a) {
  Mat y = val(a);
  for (int i = 0; i < y.size(); ++i) y[i] = std::exp(y[i]);
  int ai = a.i;
  return push(std::move(y), [ai](Tape& t, int self) {
    const Mat& gy = t.g(self);
    const Mat& yv = t.v(self);
    Mat& ga = t.g(ai);
    for (int i = 0; i < gy.size(); ++i) ga[i] += gy[i] * yv[i];
  });
}

Tape::Ref Tape::log_eps(Ref a, double eps) {
  Mat y = val(a);
  for (int i = 0; i < y.size(); ++i) y[i] = std::log(y[i] + eps);
  int ai = a.i;
  return push(std::move(y), [ai, eps](Tape& t, int self) {
    const Mat& gy = t.g(self);
    const Mat& av = t.v(ai);
    Mat& ga = t.g(ai);
    for (int i = 0; i < gy.size(); ++i) ga[i] += gy[i] / (av[i] + eps);
  });
}

Tape::Ref Tape::square(Ref a) {
  Mat y = val(a);
  for (int i = 0; i < y.size(); ++i) y[i] *= y[i];
  int ai = a.i;
  return push(std::move(y), [ai](Tape& t, int self) {
    const Mat& gy = t.g(self);
    const Mat& av = t.v(ai);
    Mat& ga = t.g(ai);
    for (int i = 0; i < gy.size(); ++i) ga[i] += 2.0 * gy[i] * av[i];
  });
}

Tape::Ref Tape::clamp(Ref a, double lo, double hi) {
  Mat y = val(a);
  for (int i = 0; i < y.size(); ++i) y[i] = std::min(hi, std::max(lo, y[i]));
  int ai = a.i;
  return push(std::move(y), [ai, lo, hi](Tape& t, int self) {
    const Mat& gy = t.g(self);
    const Mat& av = t.v(ai);
    Mat& ga = t.g(ai);
    for (int i = 0; i < gy.size(); ++i)
      if (av[i] >= lo && av[i] <= hi) ga[i] += gy[i];
  });
}

Tape::Ref Tape::softmax(Ref a) {
  const Mat& x = val(a);
  if (!x.is_vector()) throw shape_error("softmax: expected column vector");
  Mat y = x;
  double mx = y[0];
  for (int i = 1; i < y.size(); ++i) mx = std::max(mx, y[i]);
  double z = 0.0;
  for (int i = 0; i < y.size(); ++i) {
    y[i] = std::exp(y[i] - mx);
    z += y[i];
  }
  for (int i = 0; i < y.size(); ++i) y[i] /= z;
  int ai = a.i;
  return push(std::move(y), [ai](Tape& t, int self) {
    const Mat& gy = t.g(self);
    const Mat& yv = t.v(self);
    Mat& ga = t.g(ai);
    double gdoty = 0.0;
    for (int i = 0; i < gy.size(); ++i) gdoty += gy[i] * yv[i];
    for (int i = 0; i < gy.size(); ++i) ga[i] += yv[i] * (gy[i] - gdoty);
  });
}

Tape::Ref Tape::sum(Ref a) {
  double s = 0.0;
  const Mat& x = val(a);
  for (int i = 0; i < x.size(); ++i) s += x[i];
  Mat y(1, 1, s);
  int ai = a.i;
  return push(std::move(y), [ai](Tape& t, int self) {
    double gy = t.g(self)[0];
    Mat& ga = t.g(ai);
    for (int i = 0; i < ga.size(); ++i) ga[i] += gy;
  });
}

Tape::Ref Tape::slice(Ref a, int offset, int len) {
  const Mat& x = val(a);
  if (!x.is_vector() || offset < 0 || len < 0 || offset + len > x.rows)
    throw shape_error("slice: out of range");
  Mat y(len, 1);
  for (int i = 0; i < len; ++i) y[i] = x[offset + i];
  int ai = a.i;
  return push(std::move(y), [ai, offset, len](Tape& t, int self) {
    const Mat& gy = t.g(self);
    Mat& ga = t.g(ai);
    for (int i = 0; i < len; ++i) ga[offset + i] += gy[i];
  });
}

Tape::Ref Tape::concat(const std::vector<Ref>& parts) {
  int total = 0;
  for (Ref p : parts) {
    if (!val(p).is_vector()) throw shape_error("concat: parts must be column vectors");
    total += val(p).rows;
  }
  Mat y(total, 1);
  std::vector<int> idx;
  std::vector<int> off;
  idx.reserve(parts.size());
  off.reserve(parts.size());
  int o = 0;
  for (Ref p : parts) {
    const Mat& x = val(p);
    for (int i = 0; i < x.rows; ++i) y[o + i] = x[i];
    idx.push_back(p.i);
    off.push_back(o);
    o += x.rows;
  }
  return push(std::move(y), [idx, off](Tape& t, int self) {
    const Mat& gy = t.g(self);
    for (size_t k = 0; k < idx.size(); ++k) {
      Mat& ga = t.g(idx[k]);
      for (int i = 0; i < ga.size(); ++i) ga[i] += gy[off[k] + i];
    }
  });
}

Tape::Ref Tape::topk_mean(Ref a, int k) {
  const Mat& x = val(a);
  if (!x.is_vector()) throw shape_error("topk_mean: expected column vector");
  if (k < 1 || k > x.rows) throw shape_error("topk_mean: bad k");
  std::vector<int> order(static_cast<size_t>(x.rows));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&x](int i, int j) { return x[i] > x[j]; });
  std::vector<int> chosen(order.begin(), order.begin() + k);
  double s = 0.0;
  for (int i : chosen) s += x[i];
  Mat y(1, 1, s / k);
  int ai = a.i;
  return push(std::move(y), [ai, chosen, k](Tape& t, int self) {
    double gy = t.g(self)[0] / k;
    Mat& ga = t.g(ai);
    for (int i : chosen) ga[i] += gy;
  });
}

void Tape::backward(Ref loss) {
  if (!loss.valid() || val(loss).size() != 1)
    throw shape_error("backward: loss must be a 1x1 node");
  for (Node& n : nodes_) {
    n.grad = Mat(n.val.rows, n.val.cols);
  }
  nodes_[loss.i].grad[0] = 1.0;
  for (int i = loss.i; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.back) n.back(*this, i);
    if (n.sink) {
      require_same_shape(*n.sink, n.grad, "backward: gradient sink");
      for (int j = 0; j < n.grad.size(); ++j) (*n.sink)[j] += n.grad[j];
    }
  }
}

}  // namespace lseg
