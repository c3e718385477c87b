// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace histost {

/// Regularized lower incomplete gamma P(a, x), a > 0, x >= 0. Series for
/// x < a + 1, Lentz continued fraction otherwise.
double gamma_p(double a, double x);

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), computed
/// directly in the continued-fraction region to keep tail precision.
double gamma_q(double a, double x);

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
double chi2_sf(double x, double df);

/// Standard normal CDF.
double normal_cdf(double z);

}  // namespace histost
