#pragma once

#include <functional>
#include <vector>

#include "lseg/mat.hpp"

namespace lseg {

// Reverse-mode accumulation over a recorded operation graph. Nodes are
// appended in evaluation order, so backward() is a single reverse sweep.
// Values are Mat; gradients are materialized lazily by backward().
class Tape {
 public:
  struct Ref {
    int i = -1;
    bool valid() const { return i >= 0; }
  };

  // Constant: participates in the graph, receives no gradient sink.
  Ref input(Mat v) { return leaf(std::move(v), nullptr); }
  // Parameter leaf: backward() accumulates d(loss)/d(leaf) into *grad_sink.
  Ref leaf(Mat v, Mat* grad_sink);

  Ref matvec(Ref w, Ref x);
  Ref add(Ref a, Ref b);
  Ref sub(Ref a, Ref b);
  Ref mul(Ref a, Ref b);             // elementwise
  Ref mul_scalar(Ref v, Ref s);      // s is 1x1, broadcast over v
  Ref scale(Ref a, double k);
  Ref add_const(Ref a, double k);
  Ref relu(Ref a);
  Ref sigmoid(Ref a);
  Ref tanh_(Ref a);
  Ref exp_(Ref a);
  Ref log_eps(Ref a, double eps);    // log(x + eps)
  Ref square(Ref a);
  Ref clamp(Ref a, double lo, double hi);
  Ref softmax(Ref a);                // over a column vector
  Ref sum(Ref a);                    // 1x1
  Ref slice(Ref a, int offset, int len);
  Ref concat(const std::vector<Ref>& parts);
  // Mean of the k largest entries; selection is stable (value desc, index asc).
  Ref topk_mean(Ref a, int k);

  const Mat& val(Ref r) const { return nodes_[r.i].val; }
  const Mat& grad(Ref r) const { return nodes_[r.i].grad; }
  double scalar(Ref r) const;

  void backward(Ref loss);
  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat val;
    Mat grad;
    Mat* sink = nullptr;
    std::function<void(Tape&, int)> back;  // empty for leaves
  };

  std::vector<Node> nodes_;

  Ref push(Mat v, std::function<void(Tape&, int)> back);
  Mat& g(int i) { return nodes_[i].grad; }
  const Mat& v(int i) const { return nodes_[i].val; }
};

}  // namespace lseg
