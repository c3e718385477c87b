// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <boost/math/distributions/hypergeometric.hpp>
#include <cmath>
#include <map>
#include <numeric>

#include "histost/common/errors.hpp"
#include "histost/common/log.hpp"
#include "histost/common/rng.hpp"
#include "histost/domains/cluster.hpp"
#include "histost/domains/metrics.hpp"
#include "histost/domains/stats.hpp"
#include "support/metric_oracles.hpp"

using namespace histost;
using namespace histost::dom;
using ad::Tensor;
using namespace histost::testing;

namespace {

Coords grid_coords(int rows, int cols) {
    Coords c;
    for (int r = 0; r < rows; ++r)
        for (int q = 0; q < cols; ++q) c.push_back({static_cast<double>(r), static_cast<double>(q)});
    return c;
}

double oracle_pas(const Labels& l, const Coords& c, std::size_t k, std::size_t thr) {
    std::size_t bad = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        std::vector<std::size_t> idx;
        for (std::size_t j = 0; j < c.size(); ++j)
            if (j != i) idx.push_back(j);
        auto d = [&](std::size_t j) {
            return std::sqrt((c[i][0] - c[j][0]) * (c[i][0] - c[j][0]) + (c[i][1] - c[j][1]) * (c[i][1] - c[j][1]));
        };
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return d(x) < d(y); });
        std::size_t differ = 0;
        for (std::size_t m = 0; m < k; ++m) differ += l[idx[m]] != l[i];
        bad += differ >= thr;
    }
    return static_cast<double>(bad) / static_cast<double>(c.size());
}

Tensor blobs(std::uint64_t seed, std::size_t per, const std::vector<std::array<double, 2>>& centers, double sd,
             Labels* truth = nullptr) {
    Rng rng = make_rng(seed, "test/blobs");
    Tensor x(Tensor::Shape{per * centers.size(), 2});
    for (std::size_t c = 0; c < centers.size(); ++c)
        for (std::size_t i = 0; i < per; ++i) {
            x.at(c * per + i, 0) = centers[c][0] + sd * standard_normal(rng);
            x.at(c * per + i, 1) = centers[c][1] + sd * standard_normal(rng);
            if (truth) truth->push_back(static_cast<int>(c));
        }
    return x;
}

}  // namespace

TEST_CASE("kmeans with k=1 returns the mean and the total sum of squares") {
    Tensor x = Tensor::matrix({{1, 2}, {3, 5}, {-1, 0}, {4, 4}});
    const auto r = kmeans(x, 1, 3);
    CHECK(r.centroids.at(0, 0) == doctest::Approx(1.75).epsilon(1e-15));
    CHECK(r.centroids.at(0, 1) == doctest::Approx(2.75).epsilon(1e-15));
    double ss = 0;
    for (std::size_t i = 0; i < 4; ++i) ss += std::pow(x.at(i, 0) - 1.75, 2) + std::pow(x.at(i, 1) - 2.75, 2);
    CHECK(r.inertia == doctest::Approx(ss).epsilon(1e-14));
    CHECK(r.labels == Labels{0, 0, 0, 0});
}

TEST_CASE("kmeans with k=n distinct points has zero inertia") {
    Tensor x = Tensor::matrix({{0, 0}, {1, 0}, {0, 1}, {5, 5}, {2, 7}});
    const auto r = kmeans(x, 5, 1);
    CHECK(r.inertia == 0.0);
    std::vector<int> sorted = r.labels;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == Labels{0, 1, 2, 3, 4});
    CHECK_THROWS_AS(kmeans(x, 6, 1), ContractViolation);
    CHECK_THROWS_AS(kmeans(x, 0, 1), ContractViolation);
}

TEST_CASE("kmeans separates blobs 10 sigma apart and is deterministic") {
    Labels truth;
    const Tensor x = blobs(4, 60, {{0, 0}, {10, 0}}, 1.0, &truth);
    const auto r = kmeans(x, 2, 9);
    CHECK(external_metrics(r.labels, truth).ari == 1.0);
    const auto again = kmeans(x, 2, 9);
    CHECK(again.labels == r.labels);
    CHECK(again.inertia == r.inertia);
    CHECK(r.n_init == 10);
}

TEST_CASE("kmeans leaves no cluster empty on many clusters") {
    Rng rng = make_rng(2, "test/kmeans");
    Tensor x(Tensor::Shape{40, 3});
    for (auto& v : x.storage()) v = standard_normal(rng);
    for (std::size_t k : {2u, 7u, 20u, 39u}) {
        const auto r = kmeans(x, k, 5, {.n_init = 3});
        std::vector<int> count(k, 0);
        for (int l : r.labels) {
            REQUIRE(l >= 0);
            REQUIRE(l < static_cast<int>(k));
            ++count[static_cast<std::size_t>(l)];
        }
        for (int c : count) CHECK(c > 0);
    }
}

TEST_CASE("external metrics: identical, single cluster and worked example") {
    const Labels truth{2, 2, 7, 7, 7, 1};
    const Labels renamed{0, 0, 5, 5, 5, 9};
    const auto same = external_metrics(renamed, truth);
    CHECK(same.nmi == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(same.ari == 1.0);
    CHECK(same.fmi == 1.0);
    CHECK(same.hom == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(same.com == doctest::Approx(1.0).epsilon(1e-12));

    const auto one = external_metrics(Labels(6, 3), truth);
    CHECK(one.nmi == 0.0);
    CHECK(one.hom == 0.0);
    CHECK(one.com == 1.0);

    const auto ex = external_metrics(Labels{0, 1, 0, 1}, Labels{0, 0, 1, 1});
    CHECK(ex.ari == -0.5);
    CHECK(ex.fmi == 0.0);

    CHECK_THROWS_AS(external_metrics(Labels{0, 1}, Labels{0}), ContractViolation);
}

TEST_CASE("contingency pair counts sum to n choose 2") {
    Rng rng = make_rng(3, "test/contingency");
    const Labels p = random_labels(rng, 30, 4), t = random_labels(rng, 30, 3);
    const auto c = contingency(p, t);
    long total = 0;
    for (const auto& r : c.table)
        for (long v : r) total += v;
    CHECK(total == 30);
    CHECK(c.same_same + c.same_diff + c.diff_same + c.diff_diff == 435.0);
    const auto pc = count_pairs(p, t);
    CHECK(c.same_same == pc.a);
    CHECK(c.same_diff == pc.b);
    CHECK(c.diff_same == pc.c);
    CHECK(c.diff_diff == pc.d);
}

TEST_CASE("external metrics match brute-force oracles on 200 random labelings") {
    Rng rng = make_rng(11, "test/metrics");
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + uniform_index(rng, 11);
        const Labels p = random_labels(rng, n, 1 + uniform_index(rng, 4));
        const Labels t = random_labels(rng, n, 1 + uniform_index(rng, 4));
        const auto m = external_metrics(p, t);
        const auto e = oracle_entropies(p, t);
        const double mi = e.hp + e.ht - e.hjoint;
        const double nmi = (e.hp + e.ht) > 0 ? mi / ((e.hp + e.ht) / 2) : 0.0;
        const double hom = e.ht > 0 ? 1.0 - (e.hjoint - e.hp) / e.ht : 0.0;
        const double com = e.hp > 0 ? 1.0 - (e.hjoint - e.ht) / e.hp : 1.0;
        worst = std::max({worst, std::abs(m.nmi - nmi), std::abs(m.ari - oracle_ari(p, t)), std::abs(m.fmi - oracle_fmi(p, t)),
                          std::abs(m.hom - hom), std::abs(m.com - com)});
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("external metrics are invariant to relabeling either argument") {
    Rng rng = make_rng(12, "test/relabel");
    for (int trial = 0; trial < 20; ++trial) {
        const Labels p = random_labels(rng, 25, 4), t = random_labels(rng, 25, 3);
        Labels p2 = p, t2 = t;
        for (auto& v : p2) v = (v * 3 + 1) % 4 + 10;
        for (auto& v : t2) v = 2 - v;
        const auto a = external_metrics(p, t), b = external_metrics(p2, t2);
        CHECK(a.nmi == doctest::Approx(b.nmi).epsilon(1e-14));
        CHECK(a.ari == doctest::Approx(b.ari).epsilon(1e-14));
        CHECK(a.fmi == doctest::Approx(b.fmi).epsilon(1e-14));
        CHECK(a.hom == doctest::Approx(b.hom).epsilon(1e-14));
        CHECK(a.com == doctest::Approx(b.com).epsilon(1e-14));
    }
}

TEST_CASE("ARI of independent labelings concentrates near zero") {
    Rng rng = make_rng(13, "test/ari-null");
    double sum = 0.0;
    for (int trial = 0; trial < 100; ++trial) sum += external_metrics(random_labels(rng, 200, 4), random_labels(rng, 200, 4)).ari;
    CHECK(std::abs(sum / 100.0) < 0.05);
}

TEST_CASE("chaos: one cluster is exactly 1 and compact labels beat random ones") {
    const Coords g = grid_coords(10, 10);
    CHECK(chaos(Labels(100, 0), g) == 1.0);

    Rng rng = make_rng(7, "test/chaos");
    Coords pts;
    Labels compact;
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 50; ++i) {
            pts.push_back({c * 20.0 + uniform01(rng) * 5.0, uniform01(rng) * 5.0});
            compact.push_back(c);
        }
    Labels shuffled = compact;
    histost::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(chaos(compact, pts) < chaos(shuffled, pts));
}

TEST_CASE("chaos and pas are invariant to translation, rotation and scaling") {
    Rng rng = make_rng(8, "test/rigid");
    Coords pts;
    for (int i = 0; i < 80; ++i) pts.push_back({uniform01(rng) * 10.0, uniform01(rng) * 10.0});
    Labels l(80);
    for (std::size_t i = 0; i < 80; ++i) l[i] = pts[i][0] + 0.3 * pts[i][1] > 6.0 ? 1 : (pts[i][1] > 5 ? 2 : 0);
    const double c0 = chaos(l, pts), p0 = pas(l, pts, 6, 4);
    const double th = 0.7;
    Coords moved;
    for (const auto& p : pts)
        moved.push_back({3.5 * (std::cos(th) * p[0] - std::sin(th) * p[1]) + 100.0,
                         3.5 * (std::sin(th) * p[0] + std::cos(th) * p[1]) - 40.0});
    CHECK(chaos(l, moved) == doctest::Approx(c0).epsilon(1e-12));
    CHECK(pas(l, moved, 6, 4) == p0);
}

TEST_CASE("chaos skips singleton clusters with a warning") {
    const Coords g = grid_coords(4, 4);
    Labels l(16, 0);
    l[5] = 1;
    ScopedWarningCapture cap;
    const double v = chaos(l, g);
    CHECK(cap.messages().size() == 1);
    CHECK(v > 0.0);
}

TEST_CASE("pas: uniform labels, one flipped spot and oracle agreement") {
    const Coords g = grid_coords(9, 9);
    CHECK(pas(Labels(81, 0), g) == 0.0);
    Labels flipped(81, 0);
    flipped[40] = 1;  // centre
    CHECK(pas(flipped, g) == 1.0 / 81.0);

    Labels checker(81), blocks(81);
    for (int r = 0; r < 9; ++r)
        for (int c = 0; c < 9; ++c) {
            checker[static_cast<std::size_t>(r * 9 + c)] = (r + c) % 2;
            blocks[static_cast<std::size_t>(r * 9 + c)] = (r / 2 + c / 2) % 2;
        }
    CHECK(pas(checker, g) == oracle_pas(checker, g, 10, 6));
    CHECK(pas(blocks, g) == oracle_pas(blocks, g, 10, 6));

    Rng rng = make_rng(9, "test/pas");
    for (int trial = 0; trial < 10; ++trial) {
        Coords pts;
        for (int i = 0; i < 40; ++i) pts.push_back({std::floor(uniform01(rng) * 8), std::floor(uniform01(rng) * 8)});
        const Labels l = random_labels(rng, 40, 3);
        CHECK(pas(l, pts, 10, 6) == oracle_pas(l, pts, 10, 6));
    }
    CHECK_THROWS_AS(pas(Labels(10, 0), grid_coords(2, 5)), ContractViolation);
}

TEST_CASE("asw: coincident pairs, random labels, id swap") {
    Tensor x = Tensor::matrix({{0, 0}, {0, 0}, {100, 0}, {100, 0}});
    CHECK(asw(Labels{0, 0, 1, 1}, x) == 1.0);
    CHECK(asw(Labels{1, 1, 0, 0}, x) == 1.0);
    CHECK_THROWS_AS(asw(Labels{0, 0, 0, 0}, x), ContractViolation);

    const Tensor blob = blobs(5, 500, {{0, 0}}, 1.0);
    Rng rng = make_rng(5, "test/asw");
    const Labels l = random_labels(rng, 500, 3);
    CHECK(std::abs(asw(l, blob)) < 0.1);
    Labels swapped = l;
    for (auto& v : swapped) v = v == 0 ? 1 : (v == 1 ? 0 : v);
    CHECK(asw(swapped, blob) == doctest::Approx(asw(l, blob)).epsilon(1e-14));
}

TEST_CASE("asw matches a direct silhouette formula") {
    const Tensor x = Tensor::matrix({{0, 0}, {1, 0}, {0, 2}, {5, 5}, {6, 5}, {9, 9}});
    const Labels l{0, 0, 0, 1, 1, 2};
    auto d = [&](std::size_t i, std::size_t j) { return std::hypot(x.at(i, 0) - x.at(j, 0), x.at(i, 1) - x.at(j, 1)); };
    double total = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
        std::map<int, std::pair<double, int>> acc;
        for (std::size_t j = 0; j < 6; ++j)
            if (j != i) {
                acc[l[j]].first += d(i, j);
                acc[l[j]].second += 1;
            }
        if (!acc.count(l[i])) continue;  // singleton
        const double a = acc[l[i]].first / acc[l[i]].second;
        double b = 1e300;
        for (auto& [c, v] : acc)
            if (c != l[i]) b = std::min(b, v.first / v.second);
        total += (b - a) / std::max(a, b);
    }
    CHECK(asw(l, x) == doctest::Approx(total / 6).epsilon(1e-14));
}

TEST_CASE("wilcoxon worked examples") {
    const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
    const auto r = wilcoxon_rank_sum(a, b);
    CHECK(r.u == 0.0);
    CHECK(r.exact);
    CHECK(r.p == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(r.direction == -1);
    const auto same = wilcoxon_rank_sum(std::vector<double>{1, 2, 2, 5}, std::vector<double>{5, 2, 1, 2});
    CHECK(same.p == 1.0);
    CHECK(same.direction == 0);
    CHECK_THROWS_AS(wilcoxon_rank_sum(std::vector<double>{}, b), DomainError);
}

TEST_CASE("exact wilcoxon p matches enumeration of all splits, with ties") {
    Rng rng = make_rng(14, "test/wilcoxon");
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t na = 1 + uniform_index(rng, 5), nb = 1 + uniform_index(rng, 6);
        std::vector<double> a(na), b(nb);
        for (auto& v : a) v = static_cast<double>(uniform_index(rng, 5));
        for (auto& v : b) v = static_cast<double>(uniform_index(rng, 5));
        std::vector<double> all = a;
        all.insert(all.end(), b.begin(), b.end());
        const std::size_t n = all.size();
        // Midranks by counting.
        std::vector<double> rank(n);
        for (std::size_t i = 0; i < n; ++i) {
            double less = 0, eq = 0;
            for (double v : all) {
                less += v < all[i];
                eq += v == all[i];
            }
            rank[i] = less + (eq + 1) / 2;
        }
        double obs = 0;
        for (std::size_t i = 0; i < na; ++i) obs += rank[i];
        const double center = static_cast<double>(na) * (static_cast<double>(n) + 1) / 2;
        double hit = 0, total = 0;
        for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
            if (static_cast<std::size_t>(__builtin_popcount(mask)) != na) continue;
            double s = 0;
            for (std::size_t i = 0; i < n; ++i)
                if (mask & (1u << i)) s += rank[i];
            total += 1;
            hit += std::abs(s - center) >= std::abs(obs - center) - 1e-9;
        }
        CHECK(wilcoxon_rank_sum(a, b).p == doctest::Approx(hit / total).epsilon(1e-12));
    }
}

TEST_CASE("normal approximation for larger groups") {
    std::vector<double> a, b;
    for (int i = 1; i <= 10; ++i) a.push_back(i);
    for (int i = 11; i <= 20; ++i) b.push_back(i);
    const auto r = wilcoxon_rank_sum(a, b);
    CHECK(!r.exact);
    const double z = (50.0 - 0.5) / std::sqrt(100.0 * 21.0 / 12.0);
    CHECK(r.p == doctest::Approx(std::erfc(z / std::sqrt(2.0))).epsilon(1e-14));
}

TEST_CASE("BH adjustment") {
    const auto q = bh_adjust(std::vector<double>{0.005, 0.01, 0.03, 0.04});
    CHECK(q[0] == doctest::Approx(0.02).epsilon(1e-14));
    CHECK(q[1] == doctest::Approx(0.02).epsilon(1e-14));
    CHECK(q[2] == doctest::Approx(0.04).epsilon(1e-14));
    CHECK(q[3] == doctest::Approx(0.04).epsilon(1e-14));
    Rng rng = make_rng(15, "test/bh");
    std::vector<double> p(50);
    for (auto& v : p) v = uniform01(rng);
    const auto qq = bh_adjust(p);
    std::vector<std::size_t> order(50);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return p[x] < p[y]; });
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(qq[i] >= p[i]);
        CHECK(qq[i] <= 1.0);
        if (i > 0) CHECK(qq[order[i]] >= qq[order[i - 1]]);
    }
}

TEST_CASE("wilcoxon_de runs per gene and adjusts across genes") {
    const Tensor a = Tensor::matrix({{1, 5}, {2, 5}, {3, 6}});
    const Tensor b = Tensor::matrix({{4, 5}, {5, 6}, {6, 5}});
    const auto rows = wilcoxon_de(a, b, {"g1", "g2"});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].gene == "g1");
    CHECK(rows[0].p == doctest::Approx(0.1).epsilon(1e-14));
    CHECK(rows[0].q == doctest::Approx(0.2).epsilon(1e-14));
    CHECK(rows[1].p == 1.0);
    CHECK(rows[1].q == 1.0);
    CHECK_THROWS_AS(wilcoxon_de(a, b, {"g1"}), ContractViolation);
}

TEST_CASE("hypergeometric over-representation") {
    CHECK(ora_hypergeom(5, 5, 5, 10) == doctest::Approx(1.0 / 252.0).epsilon(1e-12));
    CHECK(ora_hypergeom(0, 5, 5, 10) == 1.0);
    CHECK(ora_hypergeom(3, 12, 30, 200) == doctest::Approx(ora_hypergeom(3, 30, 12, 200)).epsilon(1e-12));
    for (long hits : {1L, 4L, 8L}) {
        boost::math::hypergeometric_distribution<double> dist(40, 25, 300);
        const double ref = boost::math::cdf(boost::math::complement(dist, static_cast<unsigned>(hits - 1)));
        CHECK(ora_hypergeom(hits, 40, 25, 300) == doctest::Approx(ref).epsilon(1e-10));
    }
    CHECK_THROWS_AS(ora_hypergeom(6, 5, 5, 10), ContractViolation);
    CHECK_THROWS_AS(ora_hypergeom(1, 11, 5, 10), ContractViolation);
}

TEST_CASE("pca projects onto decreasing-variance axes") {
    Rng rng = make_rng(16, "test/pca");
    Tensor x(Tensor::Shape{300, 3});
    for (std::size_t i = 0; i < 300; ++i) {
        const double u = 5.0 * standard_normal(rng), v = 1.0 * standard_normal(rng), w = 0.1 * standard_normal(rng);
        // Rotate by 45 degrees in the first two coordinates.
        x.at(i, 0) = (u - v) / std::sqrt(2.0) + 7.0;
        x.at(i, 1) = (u + v) / std::sqrt(2.0) - 2.0;
        x.at(i, 2) = w;
    }
    const Tensor p = pca_project(x, 2);
    REQUIRE(p.cols() == 2);
    double v0 = 0, v1 = 0, m0 = 0;
    for (std::size_t i = 0; i < 300; ++i) {
        m0 += p.at(i, 0);
        v0 += p.at(i, 0) * p.at(i, 0);
        v1 += p.at(i, 1) * p.at(i, 1);
    }
    CHECK(std::abs(m0) < 1e-9);
    CHECK(v0 / 299 > 20.0);
    CHECK(v1 / 299 < 2.0);
    CHECK(v1 / 299 > 0.5);
    // Projection onto the first axis agrees with (x0 + x1)/sqrt(2) up to centering.
    double mean_s = 0;
    for (std::size_t i = 0; i < 300; ++i) mean_s += (x.at(i, 0) + x.at(i, 1)) / std::sqrt(2.0);
    mean_s /= 300;
    double corr_num = 0, a2 = 0, b2 = 0;
    for (std::size_t i = 0; i < 300; ++i) {
        const double s = (x.at(i, 0) + x.at(i, 1)) / std::sqrt(2.0) - mean_s;
        corr_num += s * p.at(i, 0);
        a2 += s * s;
        b2 += p.at(i, 0) * p.at(i, 0);
    }
    CHECK(corr_num / std::sqrt(a2 * b2) > 0.999);
}
