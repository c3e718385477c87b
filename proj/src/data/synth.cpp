// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <set>

#include "histost/common/errors.hpp"
#include "histost/common/rng.hpp"
#include "histost/data/synth.hpp"

namespace histost::data {

void SynthConfig::validate() const {
    HISTOST_REQUIRE(rows >= 8 && cols >= 8, "synth: grid extents must be at least 8x8");
    HISTOST_REQUIRE(n_domains >= 2, "synth: need at least two domains");
    HISTOST_REQUIRE(n_domains <= rows * cols, "synth: more domains than spots");
    HISTOST_REQUIRE(n_genes >= 1 && feature_dim >= 1, "synth: n_genes and feature_dim must be positive");
    HISTOST_REQUIRE(base_mean > 0.0, "synth: base_mean must be positive");
    HISTOST_REQUIRE(marker_fraction >= 0.0 && marker_fraction <= 1.0, "synth: marker_fraction must lie in [0,1]");
    HISTOST_REQUIRE(joint_fraction >= 0.0 && joint_fraction <= 1.0, "synth: joint_fraction must lie in [0,1]");
    HISTOST_REQUIRE(morph_noise >= 0.0 && morph_separation >= 0.0, "synth: noise scales must be non-negative");
    HISTOST_REQUIRE(spacing_um > 0.0 && jitter_um >= 0.0 && jitter_um < spacing_um / 2, "synth: need spacing > 0 and 0 <= jitter < spacing/2");
    if (gene_programs) {
        HISTOST_REQUIRE(gene_programs->size() == static_cast<std::size_t>(n_domains), "synth: gene_programs must have one row per domain");
        for (const auto& r : *gene_programs) {
            HISTOST_REQUIRE(r.size() == static_cast<std::size_t>(n_genes), "synth: gene_programs rows must have n_genes entries");
            for (double v : r) HISTOST_REQUIRE(v >= 0.0, "synth: gene program means must be non-negative");
        }
    }
    if (morph_means) {
        HISTOST_REQUIRE(morph_means->size() == static_cast<std::size_t>(n_domains), "synth: morph_means must have one row per domain");
        for (const auto& r : *morph_means)
            HISTOST_REQUIRE(r.size() == static_cast<std::size_t>(feature_dim), "synth: morph_means rows must have feature_dim entries");
    }
}

SynthPrograms resolve_programs(const SynthConfig& c) {
    c.validate();
    SynthPrograms p;
    const auto G = static_cast<std::size_t>(c.n_genes);
    const auto C = static_cast<std::size_t>(c.feature_dim);
    const auto K = static_cast<std::size_t>(c.n_domains);

    Rng rng = make_rng(c.program_seed, "synth/programs");
    std::vector<double> base(G);
    for (auto& b : base) b = c.base_mean * std::exp(0.5 * standard_normal(rng));
    const auto n_markers = static_cast<std::size_t>(std::llround(c.marker_fraction * static_cast<double>(G)));
    p.gene_programs.assign(K, base);
    for (std::size_t d = 0; d < K; ++d) {
        std::vector<std::size_t> genes(G);
        for (std::size_t g = 0; g < G; ++g) genes[g] = g;
        shuffle(genes.begin(), genes.end(), rng);
        for (std::size_t m = 0; m < n_markers; ++m) p.gene_programs[d][genes[m]] *= std::exp(c.domain_log_fold);
    }
    p.morph_means.assign(K, std::vector<double>(C));
    for (auto& row : p.morph_means)
        for (auto& v : row) v = c.morph_separation * standard_normal(rng);

    std::vector<std::size_t> genes(G);
    for (std::size_t g = 0; g < G; ++g) genes[g] = g;
    shuffle(genes.begin(), genes.end(), rng);
    const auto n_joint = static_cast<std::size_t>(std::llround(c.joint_fraction * static_cast<double>(G)));
    p.joint_genes.assign(genes.begin(), genes.begin() + static_cast<std::ptrdiff_t>(n_joint));
    std::sort(p.joint_genes.begin(), p.joint_genes.end());
    for (std::size_t j = 0; j < n_joint; ++j) {
        std::vector<double> u(C);
        double norm = 0.0;
        for (auto& v : u) {
            v = standard_normal(rng);
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : u) v /= norm;
        p.joint_directions.push_back(std::move(u));
    }

    if (c.gene_programs) p.gene_programs = *c.gene_programs;
    if (c.morph_means) p.morph_means = *c.morph_means;
    return p;
}

SlideDataset synth_tissue(const SynthConfig& c) {
    const SynthPrograms prog = resolve_programs(c);
    const auto G = static_cast<std::size_t>(c.n_genes);
    const auto C = static_cast<std::size_t>(c.feature_dim);
    const auto K = static_cast<std::size_t>(c.n_domains);

    // Voronoi layout: distinct seed cells, nearest seed wins, lower domain on ties.
    Rng layout = make_rng(c.seed, "synth/layout");
    std::set<std::pair<int, int>> used;
    std::vector<std::pair<int, int>> seeds;
    while (seeds.size() < K) {
        const int r = static_cast<int>(uniform_index(layout, static_cast<std::uint64_t>(c.rows)));
        const int q = static_cast<int>(uniform_index(layout, static_cast<std::uint64_t>(c.cols)));
        if (used.insert({r, q}).second) seeds.emplace_back(r, q);
    }

    SlideDataset slide;
    slide.slide_id = c.slide_id;
    slide.mode = c.coordinate_mode;
    slide.feature_dim = C;
    slide.panel.panel_id = "synth_panel";
    for (std::size_t g = 0; g < G; ++g) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "G%04zu", g);
        slide.panel.genes.emplace_back(buf);
    }

    std::vector<bool> is_joint(G, false);
    std::vector<std::size_t> joint_slot(G, 0);
    for (std::size_t j = 0; j < prog.joint_genes.size(); ++j) {
        is_joint[prog.joint_genes[j]] = true;
        joint_slot[prog.joint_genes[j]] = j;
    }

    Rng noise = make_rng(c.seed, "synth/noise");
    std::vector<double> dev(C);
    for (int r = 0; r < c.rows; ++r) {
        for (int q = 0; q < c.cols; ++q) {
            std::size_t domain = 0;
            long best = -1;
            for (std::size_t d = 0; d < K; ++d) {
                const long dr = r - seeds[d].first, dq = q - seeds[d].second;
                const long d2 = dr * dr + dq * dq;
                if (best < 0 || d2 < best) {
                    best = d2;
                    domain = d;
                }
            }
            SpotRecord s;
            char buf[24];
            std::snprintf(buf, sizeof buf, "s%05d", r * c.cols + q);
            s.id = buf;
            s.row = r;
            s.col = q;
            if (c.coordinate_mode == CoordinateMode::Continuous) {
                s.x_um = q * c.spacing_um + c.jitter_um * (2.0 * uniform01(noise) - 1.0);
                s.y_um = r * c.spacing_um + c.jitter_um * (2.0 * uniform01(noise) - 1.0);
                s.row = s.col = 0;
            }
            s.patch_features.resize(C);
            for (std::size_t k = 0; k < C; ++k) {
                dev[k] = c.morph_noise > 0.0 ? c.morph_noise * standard_normal(noise) : 0.0;
                s.patch_features[k] = static_cast<float>(prog.morph_means[domain][k] + dev[k]);
            }
            for (std::size_t g = 0; g < G; ++g) {
                double mean = prog.gene_programs[domain][g];
                if (is_joint[g]) {
                    const auto& u = prog.joint_directions[joint_slot[g]];
                    double proj = 0.0;
                    for (std::size_t k = 0; k < C; ++k) proj += u[k] * dev[k];
                    mean *= std::exp(c.joint_coupling * proj);
                }
                const std::uint64_t count = c.count_noise ? poisson(noise, mean) : static_cast<std::uint64_t>(std::llround(mean));
                if (count > 0) s.expression.push_back({static_cast<std::uint32_t>(g), count});
            }
            s.label = "domain_" + std::to_string(domain);
            slide.spots.push_back(std::move(s));
        }
    }
    return slide;
}

}  // namespace histost::data
