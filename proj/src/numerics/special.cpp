// SPDX-License-Identifier: Apache-2.0
#include "histost/numerics/special.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "histost/common/errors.hpp"

namespace histost {

namespace {

constexpr int kMaxIter = 10000;
constexpr double kEps = 1e-16;

double series_p(double a, double x) {
    double ap = a, del = 1.0 / a, sum = del;
    for (int n = 0; n < kMaxIter; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * kEps) return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
    }
    throw NumericalError("gamma_p: series did not converge for a=" + std::to_string(a) + " x=" + std::to_string(x));
}

double fraction_q(double a, double x) {
    constexpr double tiny = std::numeric_limits<double>::min() / kEps;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i < kMaxIter; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
    }
    throw NumericalError("gamma_q: continued fraction did not converge for a=" + std::to_string(a) + " x=" + std::to_string(x));
}

void check(double a, double x) {
    HISTOST_REQUIRE(a > 0.0 && x >= 0.0 && std::isfinite(a), "incomplete gamma: need a > 0 and x >= 0");
}

}  // namespace

double gamma_p(double a, double x) {
    check(a, x);
    if (x == 0.0) return 0.0;
    if (std::isinf(x)) return 1.0;
    return x < a + 1.0 ? series_p(a, x) : 1.0 - fraction_q(a, x);
}

double gamma_q(double a, double x) {
    check(a, x);
    if (x == 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    return x < a + 1.0 ? 1.0 - series_p(a, x) : fraction_q(a, x);
}

double chi2_sf(double x, double df) {
    HISTOST_REQUIRE(df > 0.0, "chi2_sf: df must be positive");
    if (x <= 0.0) return 1.0;
    return gamma_q(df / 2.0, x / 2.0);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace histost
