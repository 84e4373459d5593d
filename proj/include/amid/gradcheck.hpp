#pragma once

#include <functional>
#include <span>

#include "amid/tensor.hpp"

namespace amid::diff {

// Central finite-difference check of a scalar function of the given
// parameters. Returns the maximum over all coordinates of
//     |analytic - numeric| / max(1, |analytic|, |numeric|).
// The function is re-evaluated with each coordinate displaced by +/- step;
// parameter values are restored afterwards.
double grad_check(const std::function<Tensor()>& f, std::span<Parameter* const> params,
                  double step = 1e-5);

}  // namespace amid::diff
