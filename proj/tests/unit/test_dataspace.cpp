// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "histost/common/errors.hpp"
#include "histost/common/fs.hpp"
#include "histost/common/log.hpp"
#include "histost/data/expression.hpp"
#include "histost/data/feature_matrix.hpp"
#include "histost/data/neighborhood.hpp"
#include "histost/data/panel.hpp"
#include "histost/data/slide.hpp"
#include "histost/data/synth.hpp"
#include "support/temp_dir.hpp"

using namespace histost;
using namespace histost::data;
using histost::testing::TempDir;

namespace {

SlideDataset one_spot_slide() {
    SlideDataset s;
    s.slide_id = "mini";
    s.panel = {"p", {"A", "B", "C"}};
    s.feature_dim = 2;
    SpotRecord r;
    r.id = "spot0";
    r.row = 3;
    r.col = 4;
    r.expression = {{0, 5}, {2, 1}};
    r.patch_features = {0.5f, -1.25f};
    r.label = "tumor";
    s.spots.push_back(r);
    return s;
}

void replace_in_file(const std::filesystem::path& p, const std::string& from, const std::string& to) {
    std::string text = read_file(p);
    const auto pos = text.find(from);
    REQUIRE(pos != std::string::npos);
    text.replace(pos, from.size(), to);
    write_file_atomic(p, text);
}

SynthConfig small_config(std::uint64_t seed) {
    SynthConfig c;
    c.rows = c.cols = 12;
    c.n_genes = 20;
    c.feature_dim = 8;
    c.seed = seed;
    c.program_seed = seed + 100;
    return c;
}

}  // namespace

TEST_CASE("minimal slide roundtrips through the serializer") {
    TempDir dir;
    const SlideDataset s = one_spot_slide();
    const auto manifest = save_slide(s, dir.path());
    CHECK(load_slide(manifest) == s);
}

TEST_CASE("continuous slide roundtrips exactly") {
    TempDir dir;
    SynthConfig c = small_config(3);
    c.coordinate_mode = CoordinateMode::Continuous;
    c.jitter_um = 7.3;
    const SlideDataset s = synth_tissue(c);
    CHECK(load_slide(save_slide(s, dir.path())) == s);
}

TEST_CASE("generator output roundtrips for several seeds") {
    for (std::uint64_t seed : {0u, 1u, 17u}) {
        TempDir dir;
        const SlideDataset s = synth_tissue(small_config(seed));
        CHECK(load_slide(save_slide(s, dir.path())) == s);
    }
}

TEST_CASE("duplicate spot id is rejected with its name") {
    TempDir dir;
    SlideDataset s = one_spot_slide();
    SpotRecord second = s.spots[0];
    second.id = "spot1";
    s.spots.push_back(second);
    const auto manifest = save_slide(s, dir.path());
    replace_in_file(dir / "mini.coords.csv", "spot1,", "spot0,");
    try {
        load_slide(manifest);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("spot0") != std::string::npos);
    }

    s.spots[1].id = "spot0";
    CHECK_THROWS_AS(s.validate(), FormatError);
}

TEST_CASE("gene index beyond the panel is a format error") {
    TempDir dir;
    SlideDataset s = synth_tissue(SynthConfig{});
    REQUIRE(s.panel.size() == 100);
    const auto manifest = save_slide(s, dir.path());
    std::ofstream(dir / "synth.expr.csv", std::ios::app) << s.spots[0].id << ",999,1\n";
    try {
        load_slide(manifest);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("999") != std::string::npos);
    }
}

TEST_CASE("missing referenced file is an I/O error carrying the path") {
    TempDir dir;
    const auto manifest = save_slide(one_spot_slide(), dir.path());
    std::filesystem::remove(dir / "mini.features.bin");
    try {
        load_slide(manifest);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("mini.features.bin") != std::string::npos);
    }
    CHECK_THROWS_AS(load_slide(dir / "absent.json"), IoError);
}

TEST_CASE("unknown manifest fields are rejected") {
    TempDir dir;
    const auto manifest = save_slide(one_spot_slide(), dir.path());
    replace_in_file(manifest, "{", "{\"surprise\":1,");
    CHECK_THROWS_AS(load_slide(manifest), FormatError);
}

TEST_CASE("feature file layout matches the documented byte format") {
    FeatureMatrix m{2, 3, {1.0f, 2.0f, 3.0f, -4.0f, 0.5f, 1e-3f}};
    const std::string b = encode_feature_matrix(m);
    REQUIRE(b.size() == 4 + 4 + 8 + 8 + 6 * 4);
    CHECK(b.substr(0, 4) == "STRM");
    CHECK(static_cast<unsigned char>(b[4]) == 1);
    CHECK(b[5] == 0);
    CHECK(static_cast<unsigned char>(b[8]) == 2);
    CHECK(static_cast<unsigned char>(b[16]) == 3);
    // 1.0f is 0x3f800000 little-endian.
    CHECK(static_cast<unsigned char>(b[24]) == 0x00);
    CHECK(static_cast<unsigned char>(b[27]) == 0x3f);
    CHECK(static_cast<unsigned char>(b[26]) == 0x80);
    CHECK(decode_feature_matrix(b) == m);
    CHECK_THROWS_AS(decode_feature_matrix("STRX" + b.substr(4)), FormatError);
    CHECK_THROWS_AS(decode_feature_matrix(b.substr(0, b.size() - 1)), FormatError);
}

TEST_CASE("normalization matches the closed form") {
    const ad::Tensor counts = ad::Tensor::matrix({{1, 1, 2}});
    const auto n = normalize_expression(counts);
    CHECK(n.values.at(0, 0) == doctest::Approx(std::log(2501.0)).epsilon(1e-12));
    CHECK(n.values.at(0, 1) == doctest::Approx(std::log(2501.0)).epsilon(1e-12));
    CHECK(n.values.at(0, 2) == doctest::Approx(std::log(5001.0)).epsilon(1e-12));
}

TEST_CASE("all-zero gene stays zero and scaling a spot changes nothing") {
    const ad::Tensor counts = ad::Tensor::matrix({{3, 0, 7}, {1, 0, 2}});
    const ad::Tensor doubled = ad::Tensor::matrix({{6, 0, 14}, {1, 0, 2}});
    const auto a = normalize_expression(counts);
    const auto b = normalize_expression(doubled);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(a.values.at(i, 1) == 0.0);
        for (std::size_t j = 0; j < 3; ++j) CHECK(a.values.at(i, j) == doctest::Approx(b.values.at(i, j)).epsilon(1e-14));
    }
}

TEST_CASE("zero-library spots are dropped with a warning; negative counts are rejected") {
    ScopedWarningCapture cap;
    const auto n = normalize_expression(ad::Tensor::matrix({{0, 0}, {1, 3}}));
    CHECK(n.kept_rows == std::vector<std::size_t>{1});
    CHECK(n.values.rows() == 1);
    CHECK(cap.messages().size() == 1);
    CHECK_THROWS_AS(normalize_expression(ad::Tensor::matrix({{1, -1}})), ContractViolation);
}

TEST_CASE("HVG selection orders by variance") {
    // Column variances 0, 1 and 4 (population).
    const ad::Tensor m = ad::Tensor::matrix({{5, 1, 2}, {5, -1, -2}, {5, 1, 2}, {5, -1, -2}});
    const auto var = column_variances(m);
    CHECK(var[0] == 0.0);
    CHECK(var[1] == doctest::Approx(1.0));
    CHECK(var[2] == doctest::Approx(4.0));
    CHECK(select_hvg(m, 2) == std::vector<std::size_t>{2, 1});
    try {
        select_hvg(m, 3);
        FAIL("expected ContractViolation");
    } catch (const ContractViolation& e) {
        CHECK(std::string(e.what()).find("only 2") != std::string::npos);
    }
}

TEST_CASE("HVG ties go to the lower index and results ignore spot order") {
    // Columns 0 and 1 share a variance; column 2 is larger; column 3 is constant.
    const ad::Tensor m = ad::Tensor::matrix({{1, 0, 0, 7}, {0, 2, 0, 7}, {2, 1, 5, 7}});
    const auto all = select_hvg(m, 3);
    CHECK(all == std::vector<std::size_t>{2, 0, 1});
    const ad::Tensor shuffled = ad::Tensor::matrix({{2, 1, 5, 7}, {1, 0, 0, 7}, {0, 2, 0, 7}});
    CHECK(select_hvg(shuffled, 3) == all);
}

TEST_CASE("grid neighborhoods: interior 25, corner 9, symmetric for interior anchors") {
    SynthConfig c = small_config(1);
    const SlideDataset s = synth_tissue(c);
    const auto nbs = build_neighborhoods(s, NeighborhoodOptions::grid());
    REQUIRE(nbs.size() == s.size());
    std::vector<int> anchored(s.size(), 0);
    for (const auto& nb : nbs) {
        anchored[nb.anchor]++;
        CHECK(nb.members[nb.anchor_position()] == nb.anchor);
        for (std::size_t i = 0; i < nb.size(); ++i) {
            CHECK(std::abs(nb.offsets[i][0]) <= 2);
            CHECK(std::abs(nb.offsets[i][1]) <= 2);
            if (i > 0) CHECK(std::make_pair(nb.offsets[i - 1][0], nb.offsets[i - 1][1]) < std::make_pair(nb.offsets[i][0], nb.offsets[i][1]));
        }
    }
    for (int a : anchored) CHECK(a == 1);

    const std::size_t interior = s.index_of("s00030");  // row 2, col 6
    const std::size_t corner = s.index_of("s00000");
    CHECK(nbs[interior].size() == 25);
    CHECK(nbs[corner].size() == 9);

    auto is_interior = [&](std::size_t i) {
        return s.spots[i].row >= 2 && s.spots[i].row < c.rows - 2 && s.spots[i].col >= 2 && s.spots[i].col < c.cols - 2;
    };
    for (std::size_t a = 0; a < s.size(); ++a) {
        if (!is_interior(a)) continue;
        for (std::size_t b : nbs[a].members) {
            if (!is_interior(b)) continue;
            const auto& mb = nbs[b].members;
            CHECK(std::find(mb.begin(), mb.end(), a) != mb.end());
        }
    }
}

TEST_CASE("k-NN neighborhoods hold exactly k members, anchor first") {
    SynthConfig c = small_config(2);
    c.coordinate_mode = CoordinateMode::Continuous;
    c.jitter_um = 10.0;
    const SlideDataset s = synth_tissue(c);
    const auto nbs = build_neighborhoods(s, NeighborhoodOptions::knn(9));
    REQUIRE(nbs.size() == s.size());
    for (const auto& nb : nbs) {
        CHECK(nb.size() == 9);
        CHECK(nb.members[0] == nb.anchor);
        CHECK(nb.offsets[0][0] == 0.0);
        double prev = 0.0;
        for (std::size_t i = 1; i < nb.size(); ++i) {
            const double d = std::hypot(nb.offsets[i][0], nb.offsets[i][1]);
            CHECK(d >= prev);
            prev = d;
        }
    }
}

TEST_CASE("k-NN ties are broken by spot id") {
    SlideDataset s;
    s.slide_id = "ties";
    s.panel = {"p", {"A"}};
    s.mode = CoordinateMode::Continuous;
    s.feature_dim = 1;
    auto add = [&](std::string id, double x, double y) {
        SpotRecord r;
        r.id = std::move(id);
        r.x_um = x;
        r.y_um = y;
        r.patch_features = {0.f};
        s.spots.push_back(r);
    };
    add("m", 0, 0);
    add("z", 1, 0);
    add("b", -1, 0);
    add("c", 0, 1);
    add("a", 0, -1);
    const auto nbs = build_neighborhoods(s, NeighborhoodOptions::knn(3));
    CHECK(nbs[0].members == std::vector<std::size_t>{0, 4, 2});
}

TEST_CASE("neighborhood mode must match the coordinate mode") {
    const SlideDataset grid = synth_tissue(small_config(0));
    CHECK_THROWS_AS(build_neighborhoods(grid, NeighborhoodOptions::knn()), ContractViolation);
    SynthConfig c = small_config(0);
    c.coordinate_mode = CoordinateMode::Continuous;
    CHECK_THROWS_AS(build_neighborhoods(synth_tissue(c), NeighborhoodOptions::grid()), ContractViolation);
}

TEST_CASE("panel union of two overlapping panels") {
    PanelRegistry r;
    r.add({"A", {"g1", "g2"}});
    r.add({"B", {"g2", "g3"}});
    const PanelUnion u = panel_union(r);
    CHECK(u.panel.genes == std::vector<std::string>{"g1", "g2", "g3"});
    CHECK(u.masks[0] == std::vector<std::uint8_t>{1, 1, 0});
    CHECK(u.masks[1] == std::vector<std::uint8_t>{0, 1, 1});
    for (std::size_t p = 0; p < 2; ++p) {
        std::size_t total = 0;
        for (auto m : u.masks[p]) total += m;
        CHECK(total == r.panels()[p].size());
    }
}

TEST_CASE("panel union of one panel is the identity, and union is idempotent") {
    PanelRegistry r;
    r.add({"A", {"a", "b", "c"}});
    const PanelUnion u = panel_union(r);
    CHECK(u.panel.genes == r.panels()[0].genes);
    CHECK(u.masks[0] == std::vector<std::uint8_t>{1, 1, 1});

    PanelRegistry r2;
    r2.add({"X", {"zeta", "alpha"}});
    r2.add({"Y", {"Beta", "alpha"}});
    const PanelUnion once = panel_union(r2);
    PanelRegistry again;
    again.add(once.panel);
    CHECK(panel_union(again).panel.genes == once.panel.genes);
    CHECK(once.panel.genes == std::vector<std::string>{"Beta", "alpha", "zeta"});
    CHECK_THROWS_AS(panel_union(PanelRegistry{}), ContractViolation);
}

TEST_CASE("counts laid out over a union panel") {
    PanelRegistry r;
    r.add({"A", {"g1", "g2"}});
    r.add({"B", {"g2", "g3"}});
    const PanelUnion u = panel_union(r);
    SlideDataset s;
    s.slide_id = "b";
    s.panel = r.panels()[1];
    s.feature_dim = 1;
    SpotRecord sp;
    sp.id = "x";
    sp.expression = {{0, 4}, {1, 9}};
    sp.patch_features = {0.f};
    s.spots.push_back(sp);
    const ad::Tensor m = dense_counts(s, u);
    CHECK(m.at(0, 0) == 0.0);
    CHECK(m.at(0, 1) == 4.0);
    CHECK(m.at(0, 2) == 9.0);
}

TEST_CASE("same synth seed twice gives byte-identical datasets") {
    TempDir a, b;
    const SynthConfig c = small_config(9);
    save_slide(synth_tissue(c), a.path());
    save_slide(synth_tissue(c), b.path());
    for (const auto& entry : std::filesystem::directory_iterator(a.path())) {
        const auto name = entry.path().filename();
        CHECK(read_file(entry.path()) == read_file(b.path() / name));
    }
    SynthConfig other = c;
    other.seed = 10;
    CHECK(!(synth_tissue(other) == synth_tissue(c)));
}

TEST_CASE("synthetic domains are contiguous Voronoi regions with labels") {
    const SlideDataset s = synth_tissue(SynthConfig{});
    REQUIRE(s.has_labels());
    std::vector<std::string> names;
    const auto ids = label_ids(s, &names);
    CHECK(names.size() == 4);
    // Each domain is 4-connected.
    const int R = 32, C = 32;
    for (int d = 0; d < 4; ++d) {
        std::vector<int> seen(R * C, 0);
        int start = -1, total = 0;
        for (int i = 0; i < R * C; ++i)
            if (ids[i] == d) {
                total++;
                if (start < 0) start = i;
            }
        REQUIRE(start >= 0);
        std::vector<int> stack{start};
        seen[start] = 1;
        int reached = 0;
        while (!stack.empty()) {
            const int i = stack.back();
            stack.pop_back();
            reached++;
            const int r = i / C, q = i % C;
            const int nb[4][2] = {{r - 1, q}, {r + 1, q}, {r, q - 1}, {r, q + 1}};
            for (const auto& n : nb) {
                if (n[0] < 0 || n[0] >= R || n[1] < 0 || n[1] >= C) continue;
                const int j = n[0] * C + n[1];
                if (!seen[j] && ids[j] == d) {
                    seen[j] = 1;
                    stack.push_back(j);
                }
            }
        }
        CHECK(reached == total);
    }
}

TEST_CASE("per-domain gene means match the programs within 3 Poisson standard errors") {
    SynthConfig c;
    c.rows = c.cols = 40;
    c.n_genes = 20;
    c.seed = 5;
    c.program_seed = 6;
    const SlideDataset s = synth_tissue(c);
    const SynthPrograms prog = resolve_programs(c);
    const auto ids = label_ids(s);
    const ad::Tensor counts = dense_counts(s);
    for (int d = 0; d < c.n_domains; ++d) {
        std::vector<double> sum(c.n_genes, 0.0);
        double n = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (ids[i] != d) continue;
            n += 1;
            for (int g = 0; g < c.n_genes; ++g) sum[g] += counts.at(i, g);
        }
        REQUIRE(n > 30);
        for (int g = 0; g < c.n_genes; ++g) {
            const double mu = prog.gene_programs[d][g];
            CHECK(std::abs(sum[g] / n - mu) <= 3.0 * std::sqrt(mu / n));
        }
    }
}

TEST_CASE("noise-free synth reproduces the domain programs exactly") {
    SynthConfig c = small_config(4);
    c.n_domains = 3;
    c.n_genes = 4;
    c.feature_dim = 2;
    c.count_noise = false;
    c.morph_noise = 0.0;
    c.joint_fraction = 0.5;
    c.gene_programs = std::vector<std::vector<double>>{{1, 0, 3, 7}, {2, 2, 0, 1}, {9, 4, 4, 0}};
    c.morph_means = std::vector<std::vector<double>>{{0.5, -0.5}, {1.0, 2.0}, {-3.0, 0.25}};
    const SlideDataset s = synth_tissue(c);
    const auto ids = label_ids(s);
    const ad::Tensor counts = dense_counts(s);
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (int g = 0; g < 4; ++g) CHECK(counts.at(i, g) == (*c.gene_programs)[ids[i]][g]);
        for (int k = 0; k < 2; ++k) CHECK(s.spots[i].patch_features[k] == static_cast<float>((*c.morph_means)[ids[i]][k]));
    }
}

TEST_CASE("joint genes track the morphology draw inside a domain") {
    SynthConfig c;
    c.seed = 11;
    c.program_seed = 12;
    c.joint_fraction = 0.3;
    c.joint_coupling = 1.0;
    c.base_mean = 50.0;
    const SlideDataset s = synth_tissue(c);
    const SynthPrograms prog = resolve_programs(c);
    REQUIRE(prog.joint_genes.size() == 30);
    const auto ids = label_ids(s);
    const ad::Tensor counts = dense_counts(s);
    // Correlation of log counts with the projected morphology deviation, domain 0.
    const std::size_t g = prog.joint_genes[0];
    const auto& u = prog.joint_directions[0];
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (ids[i] != 0) continue;
        double proj = 0.0;
        for (int k = 0; k < c.feature_dim; ++k) proj += u[k] * (s.spots[i].patch_features[k] - prog.morph_means[0][k]);
        xs.push_back(proj);
        ys.push_back(std::log1p(counts.at(i, g)));
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= xs.size();
    my /= ys.size();
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    CHECK(sxy / std::sqrt(sxx * syy) > 0.6);
}

TEST_CASE("invalid synth configs are contract violations") {
    SynthConfig c;
    c.rows = 7;
    CHECK_THROWS_AS(synth_tissue(c), ContractViolation);
    c = SynthConfig{};
    c.n_domains = 1;
    CHECK_THROWS_AS(synth_tissue(c), ContractViolation);
    c = SynthConfig{};
    c.gene_programs = std::vector<std::vector<double>>{{1.0}};
    CHECK_THROWS_AS(synth_tissue(c), ContractViolation);
}
