// SPDX-License-Identifier: Apache-2.0
#include "histost/domains/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "histost/common/errors.hpp"
#include "histost/common/log.hpp"

namespace histost::dom {

namespace {

std::vector<int> dense_ids(std::span<const int> labels, std::size_t& count) {
    std::map<int, int> ids;
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, inserted] = ids.try_emplace(labels[i], static_cast<int>(ids.size()));
        out[i] = it->second;
    }
    count = ids.size();
    return out;
}

double choose2(double v) { return v * (v - 1.0) / 2.0; }

double entropy(const std::vector<long>& sizes, double n) {
    double h = 0.0;
    for (long s : sizes)
        if (s > 0) {
            const double p = static_cast<double>(s) / n;
            h -= p * std::log(p);
        }
    return h;
}

double dist(const std::array<double, 2>& a, const std::array<double, 2>& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

void check_coords(std::span<const int> labels, const Coords& coords, const char* who) {
    HISTOST_REQUIRE(labels.size() == coords.size(), std::string(who) + ": labels and coordinates differ in length");
    for (const auto& c : coords)
        HISTOST_REQUIRE(std::isfinite(c[0]) && std::isfinite(c[1]), std::string(who) + ": non-finite coordinate");
}

}  // namespace

Contingency contingency(std::span<const int> pred, std::span<const int> truth) {
    HISTOST_REQUIRE(pred.size() == truth.size(), "contingency: label vectors differ in length (" +
                                                     std::to_string(pred.size()) + " vs " + std::to_string(truth.size()) + ")");
    std::size_t r = 0, c = 0;
    const auto p = dense_ids(pred, r);
    const auto t = dense_ids(truth, c);
    Contingency out;
    out.table.assign(r, std::vector<long>(c, 0));
    out.pred_sizes.assign(r, 0);
    out.truth_sizes.assign(c, 0);
    out.n = static_cast<long>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        ++out.table[static_cast<std::size_t>(p[i])][static_cast<std::size_t>(t[i])];
        ++out.pred_sizes[static_cast<std::size_t>(p[i])];
        ++out.truth_sizes[static_cast<std::size_t>(t[i])];
    }
    double both = 0, same_pred = 0, same_truth = 0;
    for (const auto& row : out.table)
        for (long v : row) both += choose2(static_cast<double>(v));
    for (long v : out.pred_sizes) same_pred += choose2(static_cast<double>(v));
    for (long v : out.truth_sizes) same_truth += choose2(static_cast<double>(v));
    out.same_same = both;
    out.same_diff = same_pred - both;
    out.diff_same = same_truth - both;
    out.diff_diff = choose2(static_cast<double>(out.n)) - same_pred - same_truth + both;
    return out;
}

ExternalMetrics external_metrics(std::span<const int> pred, std::span<const int> truth) {
    HISTOST_REQUIRE(pred.size() >= 2, "external_metrics: need at least 2 labels");
    const Contingency ct = contingency(pred, truth);
    const double n = static_cast<double>(ct.n);
    const double hp = entropy(ct.pred_sizes, n), ht = entropy(ct.truth_sizes, n);
    double mi = 0.0;
    for (std::size_t i = 0; i < ct.table.size(); ++i)
        for (std::size_t j = 0; j < ct.table[i].size(); ++j) {
            const double v = static_cast<double>(ct.table[i][j]);
            if (v == 0) continue;
            mi += v / n * std::log(v * n / (static_cast<double>(ct.pred_sizes[i]) * static_cast<double>(ct.truth_sizes[j])));
        }
    mi = std::max(mi, 0.0);
    ExternalMetrics m;
    m.nmi = (hp + ht) > 0.0 ? std::min(1.0, mi / ((hp + ht) / 2.0)) : 0.0;
    // H(T|P) = H(T) - I, H(P|T) = H(P) - I.
    m.hom = ht > 0.0 ? std::min(1.0, mi / ht) : 0.0;
    m.com = hp > 0.0 ? std::min(1.0, mi / hp) : 1.0;

    // ARI in pair-count form; every term is an integer-valued double.
    const double a = ct.same_same, b = ct.same_diff, c = ct.diff_same, d = ct.diff_diff;
    const double ari_den = (a + b) * (b + d) + (a + c) * (c + d);
    m.ari = ari_den != 0.0 ? 2.0 * (a * d - b * c) / ari_den : 1.0;
    const double same_pred = a + b, same_truth = a + c;
    const double denom = std::sqrt(same_pred * same_truth);
    m.fmi = denom > 0.0 ? ct.same_same / denom : 0.0;
    return m;
}

double chaos(std::span<const int> labels, const Coords& coords) {
    check_coords(labels, coords, "chaos");
    const std::size_t n = coords.size();
    HISTOST_REQUIRE(n >= 2, "chaos: need at least 2 spots");
    std::map<int, std::size_t> sizes;
    for (int l : labels) ++sizes[l];
    double nn_sum = 0.0, same_sum = 0.0;
    std::size_t used = 0, skipped = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double nn = std::numeric_limits<double>::infinity(), same = nn;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double d = dist(coords[i], coords[j]);
            nn = std::min(nn, d);
            if (labels[j] == labels[i]) same = std::min(same, d);
        }
        nn_sum += nn;
        if (sizes[labels[i]] < 2) {
            ++skipped;
            continue;
        }
        same_sum += same;
        ++used;
    }
    if (skipped > 0) warn("chaos: " + std::to_string(skipped) + " spot(s) in singleton clusters skipped");
    if (!(nn_sum > 0.0)) throw DomainError("chaos: mean nearest-neighbour distance is zero");
    if (used == 0) throw DomainError("chaos: every cluster is a singleton");
    return (same_sum / static_cast<double>(used)) / (nn_sum / static_cast<double>(n));
}

double pas(std::span<const int> labels, const Coords& coords, std::size_t k, std::size_t threshold) {
    check_coords(labels, coords, "pas");
    const std::size_t n = coords.size();
    HISTOST_REQUIRE(n > k, "pas: need more spots than k (n=" + std::to_string(n) + ", k=" + std::to_string(k) + ")");
    HISTOST_REQUIRE(k >= 1 && threshold >= 1 && threshold <= k, "pas: need 1 <= threshold <= k");
    std::size_t abnormal = 0;
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) cand.emplace_back(dist(coords[i], coords[j]), j);
        std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(k), cand.end());
        std::size_t differ = 0;
        for (std::size_t m = 0; m < k; ++m) differ += labels[cand[m].second] != labels[i];
        abnormal += differ >= threshold;
    }
    return static_cast<double>(abnormal) / static_cast<double>(n);
}

double asw(std::span<const int> labels, const ad::Tensor& x) {
    HISTOST_REQUIRE(labels.size() == x.rows(), "asw: labels and rows differ in length");
    std::size_t kc = 0;
    const auto ids = dense_ids(labels, kc);
    HISTOST_REQUIRE(kc >= 2, "asw: need at least 2 clusters");
    const std::size_t n = x.rows();
    std::vector<std::size_t> size(kc, 0);
    for (int l : ids) ++size[static_cast<std::size_t>(l)];
    double total = 0.0;
    std::vector<double> sums(kc);
    for (std::size_t i = 0; i < n; ++i) {
        const auto own = static_cast<std::size_t>(ids[i]);
        if (size[own] == 1) continue;
        std::fill(sums.begin(), sums.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double s = 0.0;
            for (std::size_t f = 0; f < x.cols(); ++f) {
                const double d = x.at(i, f) - x.at(j, f);
                s += d * d;
            }
            sums[static_cast<std::size_t>(ids[j])] += std::sqrt(s);
        }
        const double a = sums[own] / static_cast<double>(size[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < kc; ++c)
            if (c != own) b = std::min(b, sums[c] / static_cast<double>(size[c]));
        const double m = std::max(a, b);
        total += m > 0.0 ? (b - a) / m : 0.0;
    }
    return total / static_cast<double>(n);
}

}  // namespace histost::dom
