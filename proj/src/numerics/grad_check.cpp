// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>

#include "histost/common/errors.hpp"
#include "histost/numerics/grad_check.hpp"

namespace histost::ad {

namespace {

// A coordinate is a kink when the one-sided difference quotients disagree by
// more than smooth curvature could explain at this step size.
bool is_kink(double f_minus, double f0, double f_plus, double eps) {
    const double right = (f_plus - f0) / eps;
    const double left = (f0 - f_minus) / eps;
    return std::fabs(right - left) > 1e-2 * std::max({1.0, std::fabs(right), std::fabs(left)});
}

double rel_error(double a, double n) { return std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), 1e-8}); }

void finish(GradCheckReport& r) {
    for (std::size_t i = 0; i < r.analytic.size(); ++i) {
        if (std::binary_search(r.kinks.begin(), r.kinks.end(), i)) continue;
        ++r.checked;
        const double e = rel_error(r.analytic[i], r.numeric[i]);
        if (e > r.max_rel_error) {
            r.max_rel_error = e;
            r.worst_index = i;
        }
    }
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const Tensor& point, double epsilon) {
    HISTOST_REQUIRE(epsilon > 0.0, "grad_check: epsilon must be positive");
    auto eval = [&](const Tensor& x) {
        Tape t;
        return f(t, t.input(x, false)).value().item();
    };

    GradCheckReport r;
    double f0 = 0.0;
    {
        Tape t;
        Var x = t.input(point, true);
        Var y = f(t, x);
        f0 = y.value().item();
        t.backward(y);
        const Tensor& g = x.grad();
        r.analytic.assign(g.data().begin(), g.data().end());
    }
    const double again = eval(point);
    if (again != f0) throw NumericalError("grad_check: function is not deterministic at the evaluation point");

    Tensor x = point;
    r.numeric.resize(point.size());
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + epsilon;
        const double fp = eval(x);
        x[i] = orig - epsilon;
        const double fm = eval(x);
        x[i] = orig;
        r.numeric[i] = (fp - fm) / (2.0 * epsilon);
        if (is_kink(fm, f0, fp, epsilon)) r.kinks.push_back(i);
    }
    finish(r);
    return r;
}

GradCheckReport grad_check_params(const ParamFn& f, std::span<Parameter* const> params, double epsilon) {
    HISTOST_REQUIRE(epsilon > 0.0, "grad_check: epsilon must be positive");
    auto eval = [&] {
        Tape t;
        return f(t).value().item();
    };

    GradCheckReport r;
    double f0 = 0.0;
    {
        Tape t;
        Var y = f(t);
        f0 = y.value().item();
        Gradients g = t.backward(y);
        for (auto* p : params) {
            const Tensor* gp = g.find(*p);
            for (std::size_t i = 0; i < p->value.size(); ++i) r.analytic.push_back(gp ? (*gp)[i] : 0.0);
        }
    }
    if (eval() != f0) throw NumericalError("grad_check: function is not deterministic at the evaluation point");

    std::size_t flat = 0;
    for (auto* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i, ++flat) {
            const double orig = p->value[i];
            p->value[i] = orig + epsilon;
            const double fp = eval();
            p->value[i] = orig - epsilon;
            const double fm = eval();
            p->value[i] = orig;
            r.numeric.push_back((fp - fm) / (2.0 * epsilon));
            if (is_kink(fm, f0, fp, epsilon)) r.kinks.push_back(flat);
        }
    }
    finish(r);
    return r;
}

}  // namespace histost::ad
