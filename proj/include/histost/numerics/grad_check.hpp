// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "histost/numerics/autodiff.hpp"

namespace histost::ad {

struct GradCheckReport {
    /// max over checked coordinates of |a - n| / max(|a|, |n|, 1e-8)
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    /// Coordinates where left and right difference quotients disagree; these
    /// are excluded from max_rel_error.
    std::vector<std::size_t> kinks;
    std::vector<double> analytic;
    std::vector<double> numeric;
};

/// Scalar function of one input tensor, recorded on the given tape.
using ScalarFn = std::function<Var(Tape&, Var)>;
/// Scalar function of bound parameters.
using ParamFn = std::function<Var(Tape&)>;

/// Compare reverse-mode gradients with central differences at `point`.
/// Throws NumericalError if two evaluations at the same point disagree.
GradCheckReport grad_check(const ScalarFn& f, const Tensor& point, double epsilon = 1e-5);

/// Same, perturbing every scalar of every listed parameter in place. The
/// parameters are restored before returning.
GradCheckReport grad_check_params(const ParamFn& f, std::span<Parameter* const> params, double epsilon = 1e-5);

}  // namespace histost::ad
