// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "histost/common/errors.hpp"
#include "histost/common/rng.hpp"
#include "histost/core/checkpoint.hpp"
#include "histost/numerics/grad_check.hpp"
#include "histost/vst/virtual_st.hpp"
#include "support/core_fixtures.hpp"

using namespace histost;
using namespace histost::vst;
using ad::Tensor;
using ad::Var;

namespace {

std::vector<std::string> gene_names(std::size_t n) {
    std::vector<std::string> g;
    for (std::size_t i = 0; i < n; ++i) g.push_back("g" + std::to_string(i));
    return g;
}

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    Rng rng = make_rng(seed, "test/matrix");
    Tensor t(Tensor::Shape{r, c});
    for (auto& v : t.storage()) v = standard_normal(rng);
    return t;
}

GeneScore score(double v) { return {"g", v, 10}; }

}  // namespace

TEST_CASE("head shapes, zero weights and identity passthrough") {
    PredictionHead h = make_head(HeadKind::Mlp, 6, 5, gene_names(4), 1);
    const Tensor x = random_matrix(3, 6, 2);
    const Tensor y = head_predict(h, x);
    CHECK(y.rows() == 3);
    CHECK(y.cols() == 4);
    for (const char* n : {"head.w2", "head.b2"}) h.params.get(n).value.fill(0.0);
    const Tensor zero = head_predict(h, x);
    for (double v : zero.data()) CHECK(v == 0.0);

    PredictionHead lin = make_head(HeadKind::Linear, 4, 0, gene_names(4), 1);
    auto& w = lin.params.get("head.w").value;
    w.fill(0.0);
    for (std::size_t i = 0; i < 4; ++i) w.at(i, i) = 1.0;
    const Tensor x4 = random_matrix(5, 4, 3);
    CHECK(head_predict(lin, x4) == x4);

    CHECK_THROWS_AS(head_predict(h, random_matrix(3, 7, 1)), ContractViolation);
}

TEST_CASE("loss_l1l2 worked values") {
    FinetuneConfig c;
    const Tensor y = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    CHECK(loss_l1l2(y, y, c) == 0.0);
    Tensor yh = y;
    for (auto& v : yh.storage()) v += 1.0;
    CHECK(loss_l1l2(yh, y, c) == 2.0);
    Tensor mixed = Tensor::matrix({{1.5, 2, 1}, {4, 7, 6}});
    FinetuneConfig l2only = c, l1only = c;
    l2only.lambda1 = 0;
    l1only.lambda2 = 0;
    CHECK(loss_l1l2(mixed, y, l2only) == doctest::Approx((0.25 + 4 + 4) / 6).epsilon(1e-15));
    CHECK(loss_l1l2(mixed, y, l1only) == doctest::Approx((0.5 + 2 + 2) / 6).epsilon(1e-15));
    CHECK(loss_l1l2(mixed, y, c) == loss_l1l2(y, mixed, c));
    FinetuneConfig l1x3 = l1only;
    l1x3.lambda1 = 3;
    CHECK(loss_l1l2(mixed, y, l1x3) == doctest::Approx(3 * loss_l1l2(mixed, y, l1only)).epsilon(1e-15));
    CHECK_THROWS_AS(loss_l1l2(Tensor::matrix({{1, 2}}), y, c), ContractViolation);
    FinetuneConfig bad = c;
    bad.lambda1 = bad.lambda2 = 0;
    CHECK_THROWS_AS(bad.validate(), ContractViolation);
    bad.lambda1 = -1;
    CHECK_THROWS_AS(bad.validate(), ContractViolation);
}

TEST_CASE("loss_l1l2 on the tape matches the direct value and passes grad_check") {
    FinetuneConfig c;
    c.lambda1 = 0.7;
    c.lambda2 = 1.3;
    const Tensor y = random_matrix(4, 3, 5);
    const Tensor p = random_matrix(4, 3, 6);
    ad::Tape t;
    CHECK(loss_l1l2(t.input(p), y, c).value().item() == doctest::Approx(loss_l1l2(p, y, c)).epsilon(1e-14));
    const auto r = ad::grad_check([&](ad::Tape&, Var x) { return loss_l1l2(x, y, c); }, p);
    CHECK(r.max_rel_error < 1e-7);
}

TEST_CASE("pcc worked examples and two-pass oracle") {
    const auto g = gene_names(1);
    CHECK(*pcc_genewise(Tensor::matrix({{1}, {2}, {3}}), Tensor::matrix({{1}, {2}, {3}}), g)[0].pcc == 1.0);
    CHECK(*pcc_genewise(Tensor::matrix({{1}, {2}, {3}}), Tensor::matrix({{3}, {2}, {1}}), g)[0].pcc == -1.0);
    // [1,2,3] vs [1,2,4]: means 2 and 7/3; cov sum = (-1)(-4/3) + 0 + (1)(5/3) = 3;
    // sxx = 2; syy = 16/9 + 1/9 + 25/9 = 42/9.
    const double oracle = 3.0 / std::sqrt(2.0 * 42.0 / 9.0);
    const auto s = pcc_genewise(Tensor::matrix({{1}, {2}, {3}}), Tensor::matrix({{1}, {2}, {4}}), g);
    CHECK(std::abs(*s[0].pcc - oracle) <= 1e-12);
    CHECK(s[0].n_spots == 3);
    CHECK_THROWS_AS(pcc_genewise(Tensor::matrix({{1}, {2}}), Tensor::matrix({{1}, {2}}), g), ContractViolation);
}

TEST_CASE("pcc flags zero-variance genes and is invariant to positive affine maps") {
    const Tensor p = random_matrix(20, 3, 7), y = random_matrix(20, 3, 8);
    Tensor p2 = p, y2 = y;
    for (std::size_t i = 0; i < 20; ++i) {
        p2.at(i, 0) = 3.0 * p.at(i, 0) - 2.0;
        y2.at(i, 1) = 0.5 * y.at(i, 1) + 9.0;
        p2.at(i, 2) = 4.0;  // constant prediction
    }
    const auto a = pcc_genewise(p, y, gene_names(3)), b = pcc_genewise(p2, y2, gene_names(3));
    CHECK(*b[0].pcc == doctest::Approx(*a[0].pcc).epsilon(1e-12));
    CHECK(*b[1].pcc == doctest::Approx(*a[1].pcc).epsilon(1e-12));
    CHECK(!b[2].pcc.has_value());
    CHECK(undefined_count(b) == 1);
}

TEST_CASE("benchmark report medians and flags") {
    const auto same = benchmark_report({score(0.3), score(0.3), score(0.3)}, {1, 2, 3});
    for (const auto& r : same) CHECK(*r.median_pcc == 0.3);
    const auto rows = benchmark_report({score(1.0), score(0.5), score(0.0)}, {2});
    CHECK(*rows[0].median_pcc == 0.75);
    std::vector<GeneScore> with_undefined{score(0.2), {"u", std::nullopt, 10}, score(0.9)};
    const auto r2 = benchmark_report(with_undefined, {1, 2, 3});
    CHECK(*r2[0].median_pcc == 0.9);
    CHECK(*r2[1].median_pcc == doctest::Approx(0.55).epsilon(1e-15));
    CHECK(!r2[2].median_pcc.has_value());
    CHECK_THROWS_AS(benchmark_report({}, {1}), ContractViolation);
}

TEST_CASE("head-only fine-tuning on a linear mapping lowers the loss and is deterministic") {
    HeadData d;
    d.x = random_matrix(200, 8, 11);
    const Tensor a = random_matrix(8, 3, 12);
    d.y = Tensor(Tensor::Shape{200, 3});
    Rng rng = make_rng(13, "test/noise");
    for (std::size_t i = 0; i < 200; ++i) {
        d.spot_ids.push_back("s" + std::to_string(i));
        for (std::size_t g = 0; g < 3; ++g) {
            double v = 0.1 * standard_normal(rng);
            for (std::size_t k = 0; k < 8; ++k) v += d.x.at(i, k) * a.at(k, g);
            d.y.at(i, g) = v;
        }
    }
    FinetuneConfig c;
    c.hidden = 32;
    c.lr = 5e-3;
    const auto r1 = finetune_head(d, gene_names(3), c, 4);
    const auto r2 = finetune_head(d, gene_names(3), c, 4);
    CHECK(r1.epoch_loss.size() == 10);
    CHECK(r1.epoch_loss.back() < r1.initial_loss);
    CHECK(r1.epoch_loss.back() < 0.5 * r1.epoch_loss.front());
    CHECK(core::params_checksum(r1.head.params) == core::params_checksum(r2.head.params));
    const auto r3 = finetune_head(d, gene_names(3), c, 5);
    CHECK(core::params_checksum(r1.head.params) != core::params_checksum(r3.head.params));
    CHECK_THROWS_AS(finetune_head(HeadData{}, gene_names(3), c, 4), DomainError);
}

TEST_CASE("head data comes from frozen H&E-only embeddings and leaves the backbone untouched") {
    const auto slide = data::synth_tissue(testing::tiny_synth(3));
    const auto cfg = testing::tiny_model_config();
    const auto corpus = core::prepare_corpus({slide}, cfg.grid_size, cfg.knn);
    core::SpatialModel model(cfg, 3);
    const std::string before = core::params_checksum(model.params());
    const HeadData d = head_data(model, corpus, {0}, {0, 2, 4});
    CHECK(d.x.rows() == 64);
    CHECK(d.x.cols() == cfg.dim);
    CHECK(d.y.cols() == 3);
    CHECK(d.y.at(5, 1) == corpus.slides[0].expression.at(5, 2));
    FinetuneConfig c;
    c.hidden = 8;
    c.epochs = 2;
    finetune_head(d, {"a", "b", "c"}, c, 1);
    CHECK(core::params_checksum(model.params()) == before);
}

TEST_CASE("slide and coordinate splits") {
    const auto s = split_slides(5, 0.2, 9);
    CHECK(s.test.size() == 1);
    CHECK(s.train.size() == 4);
    CHECK(split_slides(5, 0.2, 9).test == s.test);
    CHECK(split_slides(1, 0.2, 9).test.empty());
    std::vector<std::array<double, 2>> c{{5, 0}, {1, 0}, {3, 0}, {2, 0}, {4, 0}};
    const auto x = split_by_x(c, 0.6);
    CHECK(x.train == std::vector<std::size_t>{1, 2, 3});
    CHECK(x.test == std::vector<std::size_t>{0, 4});
}
