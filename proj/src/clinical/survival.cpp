// SPDX-License-Identifier: Apache-2.0
#include "histost/clinical/survival.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "histost/common/errors.hpp"
#include "histost/common/fs.hpp"
#include "histost/common/rng.hpp"
#include "histost/numerics/special.hpp"

namespace histost::clin {

using ad::Tensor;
using ad::Var;

namespace {

void check_survival(std::size_t n, std::span<const double> times, std::span<const int> events, const char* who) {
    HISTOST_REQUIRE(times.size() == n && events.size() == n,
                    std::string(who) + ": scores, times and events differ in length");
    for (std::size_t i = 0; i < n; ++i) {
        HISTOST_REQUIRE(times[i] > 0.0 && std::isfinite(times[i]), std::string(who) + ": time must be positive and finite");
        HISTOST_REQUIRE(events[i] == 0 || events[i] == 1, std::string(who) + ": event flag must be 0 or 1");
    }
}

std::size_t event_count(std::span<const int> events) {
    return static_cast<std::size_t>(std::count(events.begin(), events.end(), 1));
}

std::vector<std::size_t> by_time(std::span<const double> times) {
    std::vector<std::size_t> order(times.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
    return order;
}

/// Per-subject log of the Breslow risk-set sum sum_{j: t_j >= t_i} exp(s_j),
/// shifted by `shift` for stability.
std::vector<double> log_risk_sums(std::span<const double> s, std::span<const double> times, double shift) {
    const auto order = by_time(times);
    const std::size_t n = s.size();
    std::vector<double> out(n);
    double acc = 0.0;
    std::size_t hi = n;
    while (hi > 0) {
        std::size_t lo = hi - 1;
        while (lo > 0 && times[order[lo - 1]] == times[order[hi - 1]]) --lo;
        for (std::size_t k = lo; k < hi; ++k) acc += std::exp(s[order[k]] - shift);
        for (std::size_t k = lo; k < hi; ++k) out[order[k]] = std::log(acc) + shift;
        hi = lo;
    }
    return out;
}

}  // namespace

double cox_nll(std::span<const double> scores, std::span<const double> times, std::span<const int> events) {
    check_survival(scores.size(), times, events, "cox_nll");
    if (event_count(events) == 0) throw DomainError("cox_nll: no events; the partial likelihood is undefined");
    const double shift = *std::max_element(scores.begin(), scores.end());
    const auto lr = log_risk_sums(scores, times, shift);
    double nll = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (events[i]) nll -= scores[i] - lr[i];
    return nll;
}

Var cox_nll_loss(Var scores, std::span<const double> times, std::span<const int> events) {
    const Tensor& sv = scores.value();
    HISTOST_REQUIRE(sv.ndim() == 1 || (sv.ndim() == 2 && sv.cols() == 1), "cox_nll_loss: scores must be [n] or n x 1");
    const std::vector<double> s(sv.data().begin(), sv.data().end());
    const double value = cox_nll(s, times, events);
    std::vector<double> t(times.begin(), times.end());
    std::vector<int> e(events.begin(), events.end());
    ad::Tape& tape = *scores.tape;
    ad::Tape::BackwardFn fn;
    if (tape.requires_grad(scores.id)) {
        fn = [sid = scores.id, s, t = std::move(t), e = std::move(e)](ad::Tape& tp, std::size_t self) {
            // d/ds_j = -e_j + exp(s_j) * sum_{events i: t_i <= t_j} 1 / R_i
            const double g = tp.grad(self)[0];
            const double shift = *std::max_element(s.begin(), s.end());
            const auto lr = log_risk_sums(s, t, shift);
            const auto order = by_time(t);
            Tensor& gs = tp.grad_buffer(sid);
            double acc = 0.0;
            std::size_t lo = 0;
            while (lo < order.size()) {
                std::size_t hi = lo + 1;
                while (hi < order.size() && t[order[hi]] == t[order[lo]]) ++hi;
                for (std::size_t k = lo; k < hi; ++k)
                    if (e[order[k]]) acc += std::exp(shift - lr[order[k]]);
                for (std::size_t k = lo; k < hi; ++k) {
                    const std::size_t j = order[k];
                    gs[j] += g * (std::exp(s[j] - shift) * acc - e[j]);
                }
                lo = hi;
            }
        };
    }
    return tape.push("cox_nll", Tensor::scalar(value), {scores.id}, std::move(fn));
}

double c_index(std::span<const double> scores, std::span<const double> times, std::span<const int> events) {
    check_survival(scores.size(), times, events, "c_index");
    double concordant = 0.0;
    std::size_t comparable = 0;
    const std::size_t n = scores.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (!events[i]) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (!(times[i] < times[j])) continue;
            ++comparable;
            if (scores[i] > scores[j])
                concordant += 1.0;
            else if (scores[i] == scores[j])
                concordant += 0.5;
        }
    }
    if (comparable == 0) throw DomainError("c_index: no comparable pairs");
    return concordant / static_cast<double>(comparable);
}

std::vector<KmPoint> km_curve(std::span<const double> times, std::span<const int> events) {
    check_survival(times.size(), times, events, "km_curve");
    const auto order = by_time(times);
    std::vector<KmPoint> out;
    double s = 1.0;
    std::size_t lo = 0;
    while (lo < order.size()) {
        std::size_t hi = lo + 1;
        while (hi < order.size() && times[order[hi]] == times[order[lo]]) ++hi;
        KmPoint p;
        p.time = times[order[lo]];
        p.at_risk = order.size() - lo;
        for (std::size_t k = lo; k < hi; ++k) (events[order[k]] ? p.events : p.censored) += 1;
        s *= 1.0 - static_cast<double>(p.events) / static_cast<double>(p.at_risk);
        p.survival = s;
        out.push_back(p);
        lo = hi;
    }
    return out;
}

double km_at(const std::vector<KmPoint>& curve, double t) {
    double s = 1.0;
    for (const auto& p : curve) {
        if (p.time > t) break;
        s = p.survival;
    }
    return s;
}

void write_km_csv(const fs::path& path, const std::vector<std::pair<std::string, std::vector<KmPoint>>>& curves) {
    std::string out = "group,time,survival,at_risk,events,censored\n";
    for (const auto& [name, curve] : curves)
        for (const auto& p : curve)
            out += name + "," + format_double(p.time) + "," + format_double(p.survival) + "," + std::to_string(p.at_risk) +
                   "," + std::to_string(p.events) + "," + std::to_string(p.censored) + "\n";
    write_file_atomic(path, out);
}

LogRankResult logrank(std::span<const double> times_a, std::span<const int> events_a, std::span<const double> times_b,
                      std::span<const int> events_b) {
    HISTOST_REQUIRE(!times_a.empty() && !times_b.empty(), "logrank: both groups must be nonempty");
    check_survival(times_a.size(), times_a, events_a, "logrank");
    check_survival(times_b.size(), times_b, events_b, "logrank");
    if (event_count(events_a) + event_count(events_b) == 0) throw DomainError("logrank: no events in either group");
    std::vector<double> event_times;
    for (std::size_t i = 0; i < times_a.size(); ++i)
        if (events_a[i]) event_times.push_back(times_a[i]);
    for (std::size_t i = 0; i < times_b.size(); ++i)
        if (events_b[i]) event_times.push_back(times_b[i]);
    std::sort(event_times.begin(), event_times.end());
    event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());

    const auto tally = [](std::span<const double> t, std::span<const int> e, double at, double& risk, double& dead) {
        risk = dead = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (t[i] >= at) risk += 1.0;
            if (t[i] == at && e[i]) dead += 1.0;
        }
    };
    LogRankResult r;
    for (double at : event_times) {
        double na, da, nb, db;
        tally(times_a, events_a, at, na, da);
        tally(times_b, events_b, at, nb, db);
        const double n = na + nb, d = da + db;
        r.observed_a += da;
        r.expected_a += d * na / n;
        if (n > 1.0) r.variance += d * (na / n) * (nb / n) * (n - d) / (n - 1.0);
    }
    const double diff = r.observed_a - r.expected_a;
    if (r.variance > 0.0) {
        r.statistic = diff * diff / r.variance;
        r.p = chi2_sf(r.statistic, 1.0);
    }
    return r;
}

double cox_loglik(const Tensor& x, std::span<const double> times, std::span<const int> events, std::span<const double> beta) {
    HISTOST_REQUIRE(x.ndim() == 2 && beta.size() == x.cols(), "cox_loglik: beta length must equal the covariate count");
    std::vector<double> eta(x.rows(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) eta[i] += x.at(i, j) * beta[j];
    return -cox_nll(eta, times, events);
}

CoxFit cox_fit(const Tensor& x, std::span<const double> times, std::span<const int> events, const CoxOptions& options) {
    HISTOST_REQUIRE(x.ndim() == 2 && x.rows() >= 2, "cox_fit: need a subjects x covariates matrix with >= 2 rows");
    const std::size_t n = x.rows(), p = x.cols();
    check_survival(n, times, events, "cox_fit");
    if (event_count(events) == 0) throw DomainError("cox_fit: no events");

    Eigen::MatrixXd z(n, p);
    for (std::size_t j = 0; j < p; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += x.at(i, j);
        m /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) z(static_cast<long>(i), static_cast<long>(j)) = x.at(i, j) - m;
    }
    const auto order = by_time(times);

    // Log-likelihood, score and information at beta; tied times share one
    // Breslow risk set.
    const auto evaluate = [&](const Eigen::VectorXd& beta, Eigen::VectorXd& u, Eigen::MatrixXd& info) {
        const Eigen::VectorXd eta = z * beta;
        const double shift = eta.maxCoeff();
        u.setZero(static_cast<long>(p));
        info.setZero(static_cast<long>(p), static_cast<long>(p));
        double ll = 0.0, s0 = 0.0;
        Eigen::VectorXd s1 = Eigen::VectorXd::Zero(static_cast<long>(p));
        Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(static_cast<long>(p), static_cast<long>(p));
        std::size_t hi = n;
        while (hi > 0) {
            std::size_t lo = hi - 1;
            while (lo > 0 && times[order[lo - 1]] == times[order[hi - 1]]) --lo;
            for (std::size_t k = lo; k < hi; ++k) {
                const long i = static_cast<long>(order[k]);
                const double w = std::exp(eta(i) - shift);
                const Eigen::VectorXd zi = z.row(i).transpose();
                s0 += w;
                s1 += w * zi;
                s2 += w * zi * zi.transpose();
            }
            const Eigen::VectorXd mean = s1 / s0;
            const Eigen::MatrixXd cov = s2 / s0 - mean * mean.transpose();
            for (std::size_t k = lo; k < hi; ++k) {
                const long i = static_cast<long>(order[k]);
                if (!events[order[k]]) continue;
                ll += eta(i) - (std::log(s0) + shift);
                u += z.row(i).transpose() - mean;
                info += cov;
            }
            hi = lo;
        }
        return ll;
    };

    CoxFit fit;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<long>(p)), u;
    Eigen::MatrixXd info;
    double ll = evaluate(beta, u, info);
    bool converged = false;
    constexpr double kDivergent = 25.0;
    for (std::size_t it = 1; it <= options.max_iter; ++it) {
        fit.iterations = it;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 1e-12 * std::max(1.0, info.diagonal().maxCoeff())) {
            if (beta.cwiseAbs().maxCoeff() > kDivergent / 2) {
                fit.monotone = true;
                break;
            }
            throw NumericalError("cox_fit: information matrix is singular at iteration " + std::to_string(it) +
                                 " (collinear or constant covariates?)");
        }
        Eigen::VectorXd step = ldlt.solve(u);
        Eigen::VectorXd u2;
        Eigen::MatrixXd info2;
        double ll2 = evaluate(beta + step, u2, info2);
        for (int half = 0; half < 30 && ll2 < ll - 1e-12; ++half) {
            step /= 2.0;
            ll2 = evaluate(beta + step, u2, info2);
        }
        beta += step;
        const double moved = step.cwiseAbs().maxCoeff();
        ll = ll2;
        u = u2;
        info = info2;
        if (beta.cwiseAbs().maxCoeff() > kDivergent) {
            fit.monotone = true;
            break;
        }
        if (moved < options.tol) {
            converged = true;
            break;
        }
    }
    if (!converged && !fit.monotone)
        throw NumericalError("cox_fit: Newton-Raphson did not converge in " + std::to_string(options.max_iter) +
                             " iterations (last max |step| above " + format_double(options.tol) + ")");

    fit.loglik = ll;
    const Eigen::MatrixXd cov = info.ldlt().solve(Eigen::MatrixXd::Identity(static_cast<long>(p), static_cast<long>(p)));
    for (std::size_t j = 0; j < p; ++j) {
        const long jj = static_cast<long>(j);
        const double b = beta(jj);
        const double se = fit.monotone ? std::nan("") : std::sqrt(cov(jj, jj));
        fit.beta.push_back(b);
        fit.hr.push_back(std::exp(b));
        fit.se.push_back(se);
        fit.z.push_back(b / se);
        fit.p.push_back(fit.monotone ? std::nan("") : std::erfc(std::abs(b / se) / std::sqrt(2.0)));
    }
    return fit;
}

void write_cox_csv(const fs::path& path, const std::vector<std::string>& terms, const CoxFit& fit) {
    HISTOST_REQUIRE(terms.size() == fit.beta.size(), "write_cox_csv: term names do not match the fit");
    const auto f = [](double v) { return std::isfinite(v) ? format_double(v) : std::string("NA"); };
    std::string out = "term,beta,HR,se,p\n";
    for (std::size_t j = 0; j < terms.size(); ++j)
        out += terms[j] + "," + f(fit.beta[j]) + "," + f(fit.hr[j]) + "," + f(fit.se[j]) + "," + f(fit.p[j]) + "\n";
    write_file_atomic(path, out);
}

namespace {

double quantile7(const std::vector<double>& sorted, double q) {
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

BootstrapResult bootstrap_ci(const ResampleMetric& metric, std::size_t n, std::size_t b, std::uint64_t seed, double level) {
    HISTOST_REQUIRE(n >= 2, "bootstrap_ci: need at least 2 subjects");
    HISTOST_REQUIRE(b >= 1, "bootstrap_ci: need at least one resample");
    HISTOST_REQUIRE(level > 0.0 && level < 1.0, "bootstrap_ci: level must lie in (0, 1)");
    BootstrapResult r;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    const auto full = metric(idx);
    if (!full) throw DomainError("bootstrap_ci: metric is undefined on the full sample");
    r.estimate = *full;

    std::vector<double> values;
    values.reserve(b);
    const std::size_t cap = 10 * b;
    std::size_t attempt = 0;
    while (values.size() < b) {
        if (attempt >= cap)
            throw DomainError("bootstrap_ci: metric undefined on too many resamples (" + std::to_string(cap) +
                              " attempts for " + std::to_string(b) + " resamples)");
        Rng rng = make_rng(seed, "bootstrap", attempt++);
        for (auto& i : idx) i = static_cast<std::size_t>(uniform_index(rng, n));
        if (const auto v = metric(idx))
            values.push_back(*v);
        else
            ++r.redraws;
    }
    r.resamples = values.size();
    const double bn = static_cast<double>(values.size());
    // Shifted sums keep a constant metric exactly constant.
    const double ref = values.front();
    double offset = 0.0;
    for (double v : values) offset += v - ref;
    r.mean = ref + offset / bn;
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.sd = values.size() > 1 ? std::sqrt(ss / (bn - 1.0)) : 0.0;
    std::sort(values.begin(), values.end());
    r.lo = quantile7(values, (1.0 - level) / 2.0);
    r.hi = quantile7(values, (1.0 + level) / 2.0);
    return r;
}

Stratification stratify_median(std::span<const double> validation_scores, const std::vector<SurvivalRecord>& test) {
    HISTOST_REQUIRE(!validation_scores.empty(), "stratify_median: no validation scores");
    std::vector<double> v(validation_scores.begin(), validation_scores.end());
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    Stratification s;
    s.cutoff = n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
    std::vector<double> th, tl;
    std::vector<int> eh, el;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const bool high = test[i].score > s.cutoff;
        (high ? s.high : s.low).push_back(i);
        (high ? th : tl).push_back(test[i].time);
        (high ? eh : el).push_back(test[i].event);
    }
    if (!th.empty()) s.km_high = km_curve(th, eh);
    if (!tl.empty()) s.km_low = km_curve(tl, el);
    if (th.empty() || tl.empty()) {
        s.note = std::string(th.empty() ? "high" : "low") + "-risk group is empty; log-rank test skipped";
    } else if (event_count(eh) + event_count(el) == 0) {
        s.note = "no events in the test records; log-rank test skipped";
    } else {
        s.test = logrank(th, eh, tl, el);
    }
    return s;
}

Cohort read_cohort_csv(const fs::path& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw FormatError(path.string() + ": empty cohort file");
    const auto header = split(lines[0], ',');
    const std::vector<std::string> fixed{"subject_id", "slide_id", "time", "event"};
    if (header.size() < 4 || !std::equal(fixed.begin(), fixed.end(), header.begin()))
        throw FormatError(path.string() + ":1: header must start with subject_id,slide_id,time,event");
    Cohort c;
    c.covariate_names.assign(header.begin() + 4, header.end());
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        if (lines[ln].empty()) continue;
        const auto f = split(lines[ln], ',');
        const std::string where = path.string() + ":" + std::to_string(ln + 1) + ": ";
        if (f.size() != header.size())
            throw FormatError(where + "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
        SurvivalRecord r;
        r.subject_id = f[0];
        r.slide_id = f[1];
        const auto num = [&](const std::string& s, const std::string& field) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(s, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != s.size() || s.empty() || !std::isfinite(v))
                throw FormatError(where + "field '" + field + "' is not a finite number: '" + s + "'");
            return v;
        };
        r.time = num(f[2], "time");
        if (r.time <= 0.0) throw FormatError(where + "field 'time' must be > 0");
        if (f[3] != "0" && f[3] != "1") throw FormatError(where + "field 'event' must be 0 or 1");
        r.event = f[3] == "1" ? 1 : 0;
        for (std::size_t j = 4; j < f.size(); ++j) r.covariates.push_back(num(f[j], header[j]));
        c.records.push_back(std::move(r));
    }
    if (c.records.empty()) throw FormatError(path.string() + ": no records");
    return c;
}

void write_cohort_csv(const fs::path& path, const Cohort& cohort) {
    std::string out = "subject_id,slide_id,time,event";
    for (const auto& n : cohort.covariate_names) out += "," + n;
    out += "\n";
    for (const auto& r : cohort.records) {
        HISTOST_REQUIRE(r.covariates.size() == cohort.covariate_names.size(), "write_cohort_csv: covariate count mismatch");
        out += r.subject_id + "," + r.slide_id + "," + format_double(r.time) + "," + std::to_string(r.event);
        for (double v : r.covariates) out += "," + format_double(v);
        out += "\n";
    }
    write_file_atomic(path, out);
}

}  // namespace histost::clin
