// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "histost/common/rng.hpp"
#include "histost/core/pretrain.hpp"
#include "histost/data/synth.hpp"

namespace histost::testing {

inline core::ModelConfig tiny_model_config() {
    core::ModelConfig c;
    c.dim = 8;
    c.blocks = 2;
    c.heads = 2;
    c.ffn_mult = 2;
    c.he_dim = 6;
    c.st_dim = 4;
    c.patch_dim = 5;
    c.he_hidden = 7;
    c.n_genes = 9;
    c.decoder_dim = 4;
    c.decoder_blocks = 1;
    c.decoder_heads = 2;
    return c;
}

inline data::SynthConfig tiny_synth(std::uint64_t seed) {
    data::SynthConfig s;
    s.rows = s.cols = 8;
    s.n_genes = 9;
    s.feature_dim = 5;
    s.n_domains = 2;
    s.seed = seed;
    s.program_seed = seed + 1;
    return s;
}

/// Adds N(0, sd^2) noise to every parameter so that zero-initialized biases
/// and unit gains take generic values.
inline void jitter_params(ad::ParamStore& store, std::uint64_t seed, double sd = 0.3) {
    Rng rng = make_rng(seed, "test/jitter");
    for (auto* p : store.all())
        for (auto& v : p->value.storage()) v += sd * standard_normal(rng);
}

struct Fixture {
    data::SlideDataset slide;
    core::Corpus corpus;
    core::SpatialModel model;

    explicit Fixture(std::uint64_t seed, core::ModelConfig cfg = tiny_model_config())
        : slide(data::synth_tissue(tiny_synth(seed))),
          corpus(core::prepare_corpus({slide}, cfg.grid_size, cfg.knn)),
          model(cfg, seed) {
        jitter_params(model.params(), seed);
    }
    core::Batch batch(std::vector<core::AnchorRef> refs) const { return core::make_batch(corpus, refs, model); }
};

inline core::ContextInput full_context(std::size_t side = 5) {
    core::ContextInput c;
    const int r = static_cast<int>(side) / 2;
    for (int dr = -r; dr <= r; ++dr)
        for (int dc = -r; dc <= r; ++dc) {
            c.coords.push_back({static_cast<double>(dr), static_cast<double>(dc)});
            c.he_row.push_back(static_cast<long>(c.he_row.size()));
            c.st_row.push_back(static_cast<long>(c.st_row.size()));
        }
    c.anchor = side * side / 2;
    return c;
}

/// Two slides on different panels so that each spot misses some union genes.
struct TwoPanelFixture {
    core::Corpus corpus;
    core::SpatialModel model;

    TwoPanelFixture()
        : corpus(make()), model(config(corpus), 21) {
        jitter_params(model.params(), 21);
    }
    static core::Corpus make() {
        auto a = data::synth_tissue(tiny_synth(30));
        auto b = data::synth_tissue(tiny_synth(31));
        b.slide_id = "other";
        b.panel.panel_id = "panel_b";
        for (auto& g : b.panel.genes) g = "B" + g;
        b.panel.genes[0] = a.panel.genes[0];
        return core::prepare_corpus({a, b}, 5, 9);
    }
    static core::ModelConfig config(const core::Corpus& c) {
        core::ModelConfig m = tiny_model_config();
        m.n_genes = c.n_genes();
        return m;
    }
};

/// Drops the ST modality from every member of a batch.
inline core::Batch he_only(core::Batch b) {
    for (auto& c : b.contexts)
        for (auto& r : c.st_row) r = -1;
    b.spots.st = {};
    return b;
}

}  // namespace histost::testing

#include "histost/numerics/grad_check.hpp"

namespace histost::testing {

/// grad_check of spatial block 0 of a jittered tiny model on a two-context
/// batch carrying both modalities, against a random linear readout.
inline ad::GradCheckReport spatial_block_grad_check(std::uint64_t seed) {
    const auto slide = data::synth_tissue(tiny_synth(seed));
    const auto corpus = core::prepare_corpus({slide}, 5, 9);
    core::SpatialModel model(tiny_model_config(), seed);
    jitter_params(model.params(), seed);
    const std::vector<core::AnchorRef> refs{{0, 0}, {0, 27}};
    const core::Batch batch = core::make_batch(corpus, refs, model);
    ad::Tensor readout;
    auto f = [&](ad::Tape& t) {
        auto [he, st] = core::encode_spots(t, model, batch.spots);
        const core::TokenState s = core::embed_tokens(t, model, batch.contexts, ad::detach(he), ad::detach(st));
        const auto bias = core::batch_bias(s, model.config().resolved_slopes());
        ad::Var y = core::spatial_block(t, model, 0, s, s.tokens, bias);
        if (readout.size() != y.value().size()) {
            Rng rng = make_rng(seed, "test/readout");
            readout = ad::Tensor(y.value().shape());
            for (auto& v : readout.storage()) v = standard_normal(rng);
        }
        return ad::sum(ad::mul_const(y, readout));
    };
    auto params = model.params().with_prefix("block0.");
    return ad::grad_check_params(f, params, 1e-5);
}

}  // namespace histost::testing
