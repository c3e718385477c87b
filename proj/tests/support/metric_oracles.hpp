// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "histost/common/rng.hpp"
#include "histost/domains/cluster.hpp"

namespace histost::testing {

// Brute-force oracles: pair enumeration and direct entropy sums.
struct PairCounts {
    double a = 0, b = 0, c = 0, d = 0;  // same/same, same pred only, same truth only, neither
};

inline PairCounts count_pairs(const dom::Labels& p, const dom::Labels& t) {
    PairCounts pc;
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = i + 1; j < p.size(); ++j) {
            const bool sp = p[i] == p[j], st = t[i] == t[j];
            if (sp && st) pc.a += 1;
            else if (sp) pc.b += 1;
            else if (st) pc.c += 1;
            else pc.d += 1;
        }
    return pc;
}

/// Index, expected index and max index under the permutation model.
inline double oracle_ari(const dom::Labels& p, const dom::Labels& t) {
    const auto [a, b, c, d] = count_pairs(p, t);
    const double total = a + b + c + d;
    const double expected = (a + b) * (a + c) / total;
    const double max_index = ((a + b) + (a + c)) / 2.0;
    return max_index == expected ? 1.0 : (a - expected) / (max_index - expected);
}

inline double oracle_fmi(const dom::Labels& p, const dom::Labels& t) {
    const auto [a, b, c, d] = count_pairs(p, t);
    (void)d;
    const double den = std::sqrt((a + b) * (a + c));
    return den == 0 ? 0.0 : a / den;
}

/// Entropies by summing -p log p over explicit label frequency maps.
struct Entropies {
    double hp = 0, ht = 0, hjoint = 0;
};

inline Entropies oracle_entropies(const dom::Labels& p, const dom::Labels& t) {
    std::map<int, double> fp, ft;
    std::map<std::pair<int, int>, double> fj;
    for (std::size_t i = 0; i < p.size(); ++i) {
        fp[p[i]] += 1;
        ft[t[i]] += 1;
        fj[{p[i], t[i]}] += 1;
    }
    const double n = static_cast<double>(p.size());
    Entropies e;
    for (auto& [_, v] : fp) e.hp -= v / n * std::log(v / n);
    for (auto& [_, v] : ft) e.ht -= v / n * std::log(v / n);
    for (auto& [_, v] : fj) e.hjoint -= v / n * std::log(v / n);
    return e;
}

inline dom::Labels random_labels(Rng& rng, std::size_t n, std::size_t k) {
    dom::Labels l(n);
    for (auto& v : l) v = static_cast<int>(uniform_index(rng, k));
    return l;
}

/// NMI (arithmetic normalization), HOM and COM from the entropies above.
struct ExternalOracle {
    double nmi, ari, fmi, hom, com;
};

inline ExternalOracle oracle_external(const dom::Labels& p, const dom::Labels& t) {
    const auto e = oracle_entropies(p, t);
    const double mi = e.hp + e.ht - e.hjoint;
    return {(e.hp + e.ht) > 0 ? mi / ((e.hp + e.ht) / 2) : 0.0, oracle_ari(p, t), oracle_fmi(p, t),
            e.ht > 0 ? 1.0 - (e.hjoint - e.hp) / e.ht : 0.0, e.hp > 0 ? 1.0 - (e.hjoint - e.ht) / e.hp : 1.0};
}

}  // namespace histost::testing
