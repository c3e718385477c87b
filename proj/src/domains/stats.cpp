// SPDX-License-Identifier: Apache-2.0
#include "histost/domains/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "histost/common/errors.hpp"

namespace histost::dom {

namespace {

/// Midranks doubled so that every value is an integer.
std::vector<long> doubled_midranks(const std::vector<double>& v, double& tie_term) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<long> r(n);
    tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        // ranks i+1..j+1, midrank (i+j+2)/2, doubled i+j+2
        for (std::size_t m = i; m <= j; ++m) r[order[m]] = static_cast<long>(i + j + 2);
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    return r;
}

double exact_p(const std::vector<long>& ranks, std::size_t m, long observed) {
    long max_sum = 0;
    {
        std::vector<long> sorted = ranks;
        std::sort(sorted.rbegin(), sorted.rend());
        for (std::size_t i = 0; i < m; ++i) max_sum += sorted[i];
    }
    const auto width = static_cast<std::size_t>(max_sum + 1);
    std::vector<std::vector<double>> dp(m + 1, std::vector<double>(width, 0.0));
    dp[0][0] = 1.0;
    for (long r : ranks)
        for (std::size_t j = m; j >= 1; --j) {
            auto& cur = dp[j];
            const auto& prev = dp[j - 1];
            for (std::size_t s = width; s-- > static_cast<std::size_t>(r);) cur[s] += prev[s - static_cast<std::size_t>(r)];
        }
    const long n = static_cast<long>(ranks.size());
    const long center = static_cast<long>(m) * (n + 1);  // null mean of the doubled sum
    const long dev = std::abs(observed - center);
    double hit = 0.0, total = 0.0;
    for (std::size_t s = 0; s < width; ++s) {
        total += dp[m][s];
        if (std::abs(static_cast<long>(s) - center) >= dev) hit += dp[m][s];
    }
    return std::min(1.0, hit / total);
}

}  // namespace

RankSumResult wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw DomainError("wilcoxon_rank_sum: a group is empty");
    std::vector<double> all(a.begin(), a.end());
    all.insert(all.end(), b.begin(), b.end());
    for (double v : all)
        if (!std::isfinite(v)) throw DomainError("wilcoxon_rank_sum: non-finite value");
    double tie_term = 0.0;
    const auto r2 = doubled_midranks(all, tie_term);
    const auto na = static_cast<double>(a.size()), nb = static_cast<double>(b.size()), n = na + nb;
    long sum_a2 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) sum_a2 += r2[i];
    RankSumResult res;
    res.u = static_cast<double>(sum_a2) / 2.0 - na * (na + 1.0) / 2.0;
    const double center = na * nb / 2.0;
    res.direction = res.u > center ? 1 : (res.u < center ? -1 : 0);
    if (std::min(a.size(), b.size()) <= 8) {
        res.exact = true;
        if (a.size() <= b.size()) {
            res.p = exact_p(r2, a.size(), sum_a2);
        } else {
            long sum_b2 = 0;
            for (std::size_t i = a.size(); i < r2.size(); ++i) sum_b2 += r2[i];
            res.p = exact_p(r2, b.size(), sum_b2);
        }
        return res;
    }
    const double var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if (var <= 0.0) {
        res.p = 1.0;
        return res;
    }
    const double z = std::max(0.0, std::abs(res.u - center) - 0.5) / std::sqrt(var);
    res.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    return res;
}

std::vector<double> bh_adjust(std::span<const double> p) {
    const std::size_t m = p.size();
    for (double v : p) HISTOST_REQUIRE(v >= 0.0 && v <= 1.0, "bh_adjust: p-values must lie in [0, 1]");
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    std::vector<double> q(m);
    double running = 1.0;
    for (std::size_t i = m; i-- > 0;) {
        const double v = p[order[i]] * static_cast<double>(m) / static_cast<double>(i + 1);
        running = std::min(running, v);
        q[order[i]] = running;
    }
    return q;
}

std::vector<DERow> wilcoxon_de(const ad::Tensor& a, const ad::Tensor& b, const std::vector<std::string>& genes) {
    HISTOST_REQUIRE(a.ndim() == 2 && b.ndim() == 2 && a.cols() == b.cols() && a.cols() == genes.size(),
                    "wilcoxon_de: group matrices and gene list disagree in width");
    if (a.rows() == 0 || b.rows() == 0) throw DomainError("wilcoxon_de: a group is empty");
    std::vector<DERow> rows(genes.size());
    std::vector<double> p(genes.size());
    std::vector<double> ca(a.rows()), cb(b.rows());
    for (std::size_t g = 0; g < genes.size(); ++g) {
        for (std::size_t i = 0; i < a.rows(); ++i) ca[i] = a.at(i, g);
        for (std::size_t i = 0; i < b.rows(); ++i) cb[i] = b.at(i, g);
        const auto r = wilcoxon_rank_sum(ca, cb);
        rows[g] = {genes[g], r.u, r.p, 1.0, r.direction};
        p[g] = r.p;
    }
    const auto q = bh_adjust(p);
    for (std::size_t g = 0; g < genes.size(); ++g) rows[g].q = q[g];
    return rows;
}

double ora_hypergeom(long hits, long set_size, long draw, long universe) {
    HISTOST_REQUIRE(universe >= 0 && set_size >= 0 && draw >= 0 && hits >= 0, "ora_hypergeom: negative count");
    HISTOST_REQUIRE(set_size <= universe && draw <= universe, "ora_hypergeom: set and draw must not exceed the universe");
    HISTOST_REQUIRE(hits <= std::min(set_size, draw), "ora_hypergeom: hits exceed min(set, draw)");
    HISTOST_REQUIRE(draw - hits <= universe - set_size, "ora_hypergeom: inconsistent counts");
    if (hits == 0) return 1.0;
    auto lchoose = [](long n, long k) {
        return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
               std::lgamma(static_cast<double>(n - k) + 1.0);
    };
    const long top = std::min(set_size, draw);
    const double denom = lchoose(universe, draw);
    double p = 0.0;
    for (long x = hits; x <= top; ++x) {
        if (draw - x > universe - set_size) continue;
        p += std::exp(lchoose(set_size, x) + lchoose(universe - set_size, draw - x) - denom);
    }
    return std::min(1.0, p);
}

}  // namespace histost::dom
