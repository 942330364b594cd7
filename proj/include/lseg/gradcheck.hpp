#pragma once

#include <functional>
#include <string>

#include "lseg/nn.hpp"

namespace lseg {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  int worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central finite differences against the tape gradients. build_loss must be
// deterministic: it is evaluated once for the analytic pass and twice per
// parameter component for the numeric pass. Relative error uses
// |a - n| / max(|a|, |n|, 1e-4); gradients below 1e-4 are compared on an
// absolute scale so finite-difference roundoff does not dominate.
GradCheckResult grad_check(const std::function<Tape::Ref(Tape&)>& build_loss,
                           ParamStore& store, double eps = 1e-4);

}  // namespace lseg
