#include "lseg/gradcheck.hpp"

#include <cmath>
#include <vector>

namespace lseg {

namespace {

double eval_loss(const std::function<Tape::Ref(Tape&)>& build_loss) {
  Tape tape;
  Tape::Ref loss = build_loss(tape);
  double v = tape.scalar(loss);
  if (!std::isfinite(v)) throw numeric_error("grad_check: non-finite loss");
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tape::Ref(Tape&)>& build_loss,
                           ParamStore& store, double eps) {
  store.zero_grads();
  {
    Tape tape;
    Tape::Ref loss = build_loss(tape);
    if (!std::isfinite(tape.scalar(loss)))
      throw numeric_error("grad_check: non-finite loss");
    tape.backward(loss);
  }
  std::vector<Mat> analytic;
  analytic.reserve(static_cast<size_t>(store.count()));
  for (int s = 0; s < store.count(); ++s) analytic.push_back(store.grad(s));

  GradCheckResult res;
  for (int s = 0; s < store.count(); ++s) {
    Mat& w = store.value(s);
    for (int i = 0; i < w.size(); ++i) {
      double orig = w[i];
      w[i] = orig + eps;
      double lp = eval_loss(build_loss);
      w[i] = orig - eps;
      double lm = eval_loss(build_loss);
      w[i] = orig;
      double numeric = (lp - lm) / (2.0 * eps);
      double a = analytic[static_cast<size_t>(s)][i];
      double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-4});
      double rel = std::fabs(a - numeric) / denom;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_param = store.name(s);
        res.worst_index = i;
        res.analytic = a;
        res.numeric = numeric;
      }
    }
  }
  store.zero_grads();
  return res;
}

}  // namespace lseg
