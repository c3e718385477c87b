// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "histost/numerics/autodiff.hpp"

namespace histost::clin {

namespace fs = std::filesystem;

struct SurvivalRecord {
    std::string subject_id;
    std::string slide_id;
    /// Months, > 0.
    double time = 0.0;
    /// 1 = event, 0 = censored.
    int event = 0;
    double score = 0.0;
    std::vector<double> covariates;
};

struct Cohort {
    std::vector<std::string> covariate_names;
    std::vector<SurvivalRecord> records;
};

/// CSV with header subject_id,slide_id,time,event[,covariates...]. Throws
/// FormatError naming the file and line.
Cohort read_cohort_csv(const fs::path& path);
void write_cohort_csv(const fs::path& path, const Cohort& cohort);

/// Negative Cox partial log-likelihood, Breslow ties:
///   -sum_{i: event} [ s_i - log sum_{j: t_j >= t_i} exp(s_j) ]
/// Throws DomainError without events.
double cox_nll(std::span<const double> scores, std::span<const double> times, std::span<const int> events);
/// Same on the tape; `scores` is n x 1 or [n].
ad::Var cox_nll_loss(ad::Var scores, std::span<const double> times, std::span<const int> events);

/// Harrell's C: pairs with t_i < t_j and event_i = 1 are comparable; score
/// ties count 0.5. Throws DomainError without comparable pairs.
double c_index(std::span<const double> scores, std::span<const double> times, std::span<const int> events);

struct KmPoint {
    double time = 0.0;
    /// Survival just after `time`.
    double survival = 1.0;
    std::size_t at_risk = 0;
    std::size_t events = 0;
    std::size_t censored = 0;
};

/// Product-limit estimate at every distinct observed time.
std::vector<KmPoint> km_curve(std::span<const double> times, std::span<const int> events);
/// Right-continuous evaluation; 1 before the first time.
double km_at(const std::vector<KmPoint>& curve, double t);
void write_km_csv(const fs::path& path, const std::vector<std::pair<std::string, std::vector<KmPoint>>>& curves);

struct LogRankResult {
    double statistic = 0.0;
    double p = 1.0;
    double observed_a = 0.0;
    double expected_a = 0.0;
    double variance = 0.0;
};

/// Two-group log-rank test over distinct event times, p from chi-square(1).
LogRankResult logrank(std::span<const double> times_a, std::span<const int> events_a, std::span<const double> times_b,
                      std::span<const int> events_b);

struct CoxOptions {
    std::size_t max_iter = 50;
    double tol = 1e-9;
};

struct CoxFit {
    std::vector<double> beta, hr, se, z, p;
    double loglik = 0.0;
    std::size_t iterations = 0;
    /// Coefficients diverge (perfect separation); estimates are not usable.
    bool monotone = false;
};

/// Newton-Raphson on the Breslow partial likelihood of centered covariates
/// (rows of `x`), Wald statistics. Throws NumericalError on a singular
/// information matrix or non-convergence.
CoxFit cox_fit(const ad::Tensor& x, std::span<const double> times, std::span<const int> events, const CoxOptions& options = {});

/// Breslow partial log-likelihood at `beta` (not centered; shift invariant).
double cox_loglik(const ad::Tensor& x, std::span<const double> times, std::span<const int> events, std::span<const double> beta);

void write_cox_csv(const fs::path& path, const std::vector<std::string>& terms, const CoxFit& fit);

struct BootstrapResult {
    double estimate = 0.0;
    double mean = 0.0;
    double sd = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    std::size_t resamples = 0;
    std::size_t redraws = 0;
};

/// Metric over a resample given as subject indices; nullopt when undefined.
using ResampleMetric = std::function<std::optional<double>(std::span<const std::size_t>)>;

/// Resample n subjects with replacement B times, resample b drawing from
/// derive_seed(seed, "bootstrap", attempt) where attempts count every draw
/// including redraws of undefined resamples (at most 10 B). Percentile CI
/// with linear interpolation between order statistics.
BootstrapResult bootstrap_ci(const ResampleMetric& metric, std::size_t n, std::size_t b, std::uint64_t seed,
                             double level = 0.95);

struct Stratification {
    double cutoff = 0.0;
    std::vector<std::size_t> high, low;
    std::vector<KmPoint> km_high, km_low;
    std::optional<LogRankResult> test;
    /// Set when a group is empty and the test was skipped.
    std::string note;
};

/// Cutoff = median of validation scores; test records with score > cutoff
/// are high risk.
Stratification stratify_median(std::span<const double> validation_scores, const std::vector<SurvivalRecord>& test);

}  // namespace histost::clin
