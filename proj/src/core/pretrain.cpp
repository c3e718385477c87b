// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <map>

#include "histost/common/errors.hpp"
#include "histost/common/log.hpp"
#include "histost/core/pretrain.hpp"
#include "histost/data/expression.hpp"

namespace histost::core {

using ad::Tensor;
using ad::Var;

std::size_t Corpus::n_anchors() const {
    std::size_t n = 0;
    for (const auto& s : slides) n += s.size();
    return n;
}

Corpus prepare_corpus(const std::vector<data::SlideDataset>& slides, int grid_size, std::size_t knn) {
    HISTOST_REQUIRE(!slides.empty(), "prepare_corpus: need at least one slide");
    data::PanelRegistry reg;
    for (const auto& s : slides) {
        bool seen = false;
        for (const auto& p : reg.panels()) seen |= p.panel_id == s.panel.panel_id && p.genes == s.panel.genes;
        if (!seen) reg.add(s.panel);
    }
    Corpus c;
    c.panels = data::panel_union(reg);
    const std::size_t G = c.n_genes();
    for (const auto& s : slides) {
        s.validate();
        HISTOST_REQUIRE(s.size() > 0 && s.feature_dim > 0, "prepare_corpus: slide " + s.slide_id + " is empty");
        PreparedSlide p;
        p.slide_id = s.slide_id;
        const auto cols = data::panel_projection(s.panel, c.panels);
        p.gene_mask.assign(G, 0.0);
        for (auto col : cols) p.gene_mask[col] = 1.0;
        p.patches = Tensor(Tensor::Shape{s.size(), s.feature_dim});
        p.expression = Tensor(Tensor::Shape{s.size(), G});
        std::vector<double> counts(s.panel.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            const auto& spot = s.spots[i];
            p.spot_ids.push_back(spot.id);
            for (std::size_t k = 0; k < s.feature_dim; ++k) p.patches.at(i, k) = spot.patch_features[k];
            std::fill(counts.begin(), counts.end(), 0.0);
            double lib = 0.0;
            for (const auto& e : spot.expression) {
                counts[e.gene] = static_cast<double>(e.count);
                lib += counts[e.gene];
            }
            p.has_st.push_back(lib > 0.0);
            if (lib <= 0.0) {
                warn("slide " + s.slide_id + ": spot " + spot.id + " has zero library size; its ST modality is dropped");
                continue;
            }
            const auto norm = data::normalize_spot(counts);
            for (std::size_t g = 0; g < norm.size(); ++g) p.expression.at(i, cols[g]) = norm[g];
        }
        const auto opts = s.mode == data::CoordinateMode::Grid ? data::NeighborhoodOptions::grid(grid_size)
                                                               : data::NeighborhoodOptions::knn(std::min(knn, s.size()));
        p.neighborhoods = data::build_neighborhoods(s, opts);
        c.slides.push_back(std::move(p));
    }
    HISTOST_REQUIRE(c.slides.front().patches.cols() > 0, "prepare_corpus: no patch features");
    for (const auto& p : c.slides)
        HISTOST_REQUIRE(p.patches.cols() == c.slides.front().patches.cols(), "prepare_corpus: slides disagree on feature_dim");
    return c;
}

namespace {

Batch assemble(const Corpus& corpus, std::span<const AnchorRef> anchors, const SpatialModel& model, bool include_st) {
    HISTOST_REQUIRE(!anchors.empty(), "make_batch: no anchors");
    const std::size_t G = corpus.n_genes();
    const std::size_t C = corpus.slides.front().patches.cols();
    const bool he_pre = model.he_encoder().kind() == enc::BackendKind::Precomputed;
    const bool st_pre = model.st_encoder().kind() == enc::BackendKind::Precomputed;
    HISTOST_REQUIRE(he_pre || C == model.config().patch_dim, "make_batch: corpus patch width disagrees with the model");
    HISTOST_REQUIRE(G == model.config().n_genes, "make_batch: corpus gene union disagrees with the model");

    Batch b;
    b.anchors.assign(anchors.begin(), anchors.end());
    std::map<std::pair<std::size_t, std::size_t>, long> he_rows, st_rows;
    std::vector<std::pair<std::size_t, std::size_t>> he_spots, st_spots;
    for (const auto& a : anchors) {
        HISTOST_REQUIRE(a.slide < corpus.slides.size() && a.anchor < corpus.slides[a.slide].size(), "make_batch: anchor out of range");
        const auto& slide = corpus.slides[a.slide];
        const auto& nb = slide.neighborhoods[a.anchor];
        ContextInput ctx;
        ctx.anchor = nb.anchor_position();
        for (std::size_t m = 0; m < nb.size(); ++m) {
            const std::pair<std::size_t, std::size_t> key{a.slide, nb.members[m]};
            ctx.coords.push_back(nb.offsets[m]);
            auto [it, fresh] = he_rows.emplace(key, static_cast<long>(he_spots.size()));
            if (fresh) he_spots.push_back(key);
            ctx.he_row.push_back(it->second);
            if (include_st && slide.has_st[nb.members[m]]) {
                auto [jt, fresh_st] = st_rows.emplace(key, static_cast<long>(st_spots.size()));
                if (fresh_st) st_spots.push_back(key);
                ctx.st_row.push_back(jt->second);
            } else {
                ctx.st_row.push_back(-1);
            }
        }
        b.contexts.push_back(std::move(ctx));
    }

    if (he_pre) {
        for (const auto& [s, i] : he_spots) b.spots.he.spot_ids.push_back(corpus.slides[s].spot_ids[i]);
    } else {
        b.spots.he.features = Tensor(Tensor::Shape{he_spots.size(), C});
        for (std::size_t r = 0; r < he_spots.size(); ++r) {
            const auto src = corpus.slides[he_spots[r].first].patches.row(he_spots[r].second);
            std::copy(src.begin(), src.end(), b.spots.he.features.storage().begin() + static_cast<std::ptrdiff_t>(r * C));
        }
    }
    if (!st_spots.empty()) {
        b.st_target = Tensor(Tensor::Shape{st_spots.size(), G});
        b.st_mask = Tensor(Tensor::Shape{st_spots.size(), G});
        for (std::size_t r = 0; r < st_spots.size(); ++r) {
            const auto& slide = corpus.slides[st_spots[r].first];
            const auto src = slide.expression.row(st_spots[r].second);
            std::copy(src.begin(), src.end(), b.st_target.storage().begin() + static_cast<std::ptrdiff_t>(r * G));
            std::copy(slide.gene_mask.begin(), slide.gene_mask.end(), b.st_mask.storage().begin() + static_cast<std::ptrdiff_t>(r * G));
        }
        if (st_pre) {
            for (const auto& [s, i] : st_spots) b.spots.st.spot_ids.push_back(corpus.slides[s].spot_ids[i]);
        } else {
            b.spots.st.features = b.st_target;
        }
    }
    return b;
}

}  // namespace

Batch make_batch(const Corpus& corpus, std::span<const AnchorRef> anchors, const SpatialModel& model) {
    return assemble(corpus, anchors, model, true);
}

MaskPlan sample_mask(const ContextInput& context, const ModelConfig& config, std::uint64_t seed) {
    HISTOST_REQUIRE(config.grid_size > 1, "sample_mask: masking is undefined with grid size 1");
    MaskPlan plan;
    bool warned = false;
    auto draw = [&](const std::vector<long>& rows, const char* purpose, std::vector<std::size_t>& visible,
                    std::vector<std::size_t>& masked) {
        std::vector<std::size_t> carriers;
        for (std::size_t m = 0; m < rows.size(); ++m)
            if (rows[m] >= 0) carriers.push_back(m);
        if (carriers.size() <= config.visible) {
            visible = carriers;
            if (!carriers.empty() && !warned) {
                warn("sample_mask: context has only " + std::to_string(carriers.size()) + " spots for a modality; nothing is masked");
                warned = true;
            }
            return;
        }
        Rng rng = make_rng(seed, purpose);
        shuffle(carriers.begin(), carriers.end(), rng);
        visible.assign(carriers.begin(), carriers.begin() + static_cast<std::ptrdiff_t>(config.visible));
        masked.assign(carriers.begin() + static_cast<std::ptrdiff_t>(config.visible), carriers.end());
        std::sort(visible.begin(), visible.end());
        std::sort(masked.begin(), masked.end());
    };
    draw(context.he_row, "mask/he", plan.he_visible, plan.he_masked);
    draw(context.st_row, "mask/st", plan.st_visible, plan.st_masked);
    return plan;
}

Var masked_mse(Var pred, const Tensor& target, const Tensor& mask, const std::vector<double>& row_weights) {
    HISTOST_REQUIRE(pred.value().same_shape(target) && target.same_shape(mask), "masked_mse: shape mismatch");
    HISTOST_REQUIRE(row_weights.size() == target.rows(), "masked_mse: one weight per row required");
    const std::size_t n = target.rows(), g = target.cols();
    Tensor coef(target.shape());
    for (std::size_t i = 0; i < n; ++i) {
        double present = 0.0;
        for (std::size_t j = 0; j < g; ++j) present += mask.at(i, j);
        HISTOST_REQUIRE(present > 0.0, "masked_mse: a row has no measured entries");
        for (std::size_t j = 0; j < g; ++j) coef.at(i, j) = mask.at(i, j) * row_weights[i] / present;
    }
    // Entries outside the mask are zeroed on both sides before squaring.
    Tensor masked_target(target.shape());
    for (std::size_t k = 0; k < target.size(); ++k) masked_target.storage()[k] = target.data()[k] * mask.data()[k];
    Var diff = ad::sub(ad::mul_const(pred, mask), pred.tape->constant(std::move(masked_target)));
    return ad::sum(ad::mul_const(ad::square(diff), coef));
}

Var decode(ad::Tape& tape, SpatialModel& model, Modality modality, const TokenState& state, Var tokens,
           const std::vector<std::size_t>& read_tokens) {
    const auto& c = model.config();
    auto& store = model.params();
    const std::string prefix = modality == Modality::HE ? "decoder_he" : "decoder_st";

    TokenState sub;
    std::vector<std::size_t> idx;
    std::vector<long> pos_of(state.size(), -1);
    sub.segments.push_back(0);
    for (std::size_t s = 0; s + 1 < state.segments.size(); ++s) {
        for (std::size_t t = state.segments[s]; t < state.segments[s + 1]; ++t) {
            if (state.tags[t] != modality) continue;
            pos_of[t] = static_cast<long>(idx.size());
            idx.push_back(t);
            sub.tags.push_back(modality);
            sub.coords.push_back(state.coords[t]);
            sub.member.push_back(state.member[t]);
        }
        if (sub.tags.size() > sub.segments.back()) sub.segments.push_back(sub.tags.size());
    }
    HISTOST_REQUIRE(!idx.empty(), "decode: no tokens of the requested modality");
    std::vector<std::size_t> read;
    for (auto t : read_tokens) {
        HISTOST_REQUIRE(t < state.size() && pos_of[t] >= 0, "decode: read token is not of the decoder's modality");
        read.push_back(static_cast<std::size_t>(pos_of[t]));
    }

    const BatchBias bias = batch_bias(sub, alibi_slopes(c.decoder_heads));
    Var x = ad::add_rowvec(ad::matmul(ad::gather_rows(tokens, idx), tape.param(store.get(prefix + ".in.w"))),
                           tape.param(store.get(prefix + ".in.b")));
    for (std::size_t j = 0; j < c.decoder_blocks; ++j)
        x = transformer_block(tape, store, prefix + ".block" + std::to_string(j), x, {}, sub.segments, bias, c.decoder_heads);
    return ad::add_rowvec(ad::matmul(ad::gather_rows(x, read), tape.param(store.get(prefix + ".head.w"))),
                          tape.param(store.get(prefix + ".head.b")));
}

PretrainLoss pretrain_loss(ad::Tape& tape, SpatialModel& model, const Batch& batch, const std::vector<MaskPlan>& plans) {
    HISTOST_REQUIRE(plans.size() == batch.contexts.size(), "pretrain_loss: one mask plan per context required");
    auto [he_emb, st_emb] = encode_spots(tape, model, batch.spots);
    EncodeOutput enc_out = run_blocks(tape, model, embed_tokens(tape, model, batch.contexts, he_emb, st_emb, &plans));
    const TokenState& state = enc_out.state;
    const double B = static_cast<double>(batch.contexts.size());

    PretrainLoss out;
    std::vector<std::size_t> he_read, st_read, he_rows, st_rows;
    std::vector<double> he_w, st_w;
    for (std::size_t c = 0; c < batch.contexts.size(); ++c) {
        const auto& ctx = batch.contexts[c];
        const auto& p = plans[c];
        for (auto m : p.he_masked) {
            HISTOST_REQUIRE(ctx.he_row.at(m) >= 0, "pretrain_loss: masked H&E member without an H&E embedding");
            he_read.push_back(state.find(c, m, Modality::HE));
            he_rows.push_back(static_cast<std::size_t>(ctx.he_row[m]));
            he_w.push_back(1.0 / (static_cast<double>(p.he_masked.size()) * B));
            out.terms.push_back({c, m, Modality::HE, 0.0, he_w.back()});
        }
    }
    const std::size_t n_he_terms = out.terms.size();
    for (std::size_t c = 0; c < batch.contexts.size(); ++c) {
        const auto& ctx = batch.contexts[c];
        const auto& p = plans[c];
        for (auto m : p.st_masked) {
            HISTOST_REQUIRE(ctx.st_row.at(m) >= 0, "pretrain_loss: masked ST member without an ST embedding");
            st_read.push_back(state.find(c, m, Modality::ST));
            st_rows.push_back(static_cast<std::size_t>(ctx.st_row[m]));
            st_w.push_back(1.0 / (static_cast<double>(p.st_masked.size()) * B));
            out.terms.push_back({c, m, Modality::ST, 0.0, st_w.back()});
        }
    }
    HISTOST_REQUIRE(!out.terms.empty(), "pretrain_loss: the batch has no masked positions");

    std::vector<Var> parts;
    if (!he_read.empty()) {
        out.he_pred = decode(tape, model, Modality::HE, state, enc_out.tokens, he_read);
        Var target = ad::detach(ad::gather_rows(he_emb, he_rows));
        out.he_target = target.value();
        const Tensor ones(out.he_target.shape(), 1.0);
        parts.push_back(masked_mse(out.he_pred, out.he_target, ones, he_w));
        const std::size_t d = out.he_target.cols();
        for (std::size_t i = 0; i < he_read.size(); ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double e = out.he_pred.value().at(i, k) - out.he_target.at(i, k);
                s += e * e;
            }
            out.terms[i].value = s / static_cast<double>(d);
        }
    }
    if (!st_read.empty()) {
        out.st_pred = decode(tape, model, Modality::ST, state, enc_out.tokens, st_read);
        const std::size_t G = batch.st_target.cols();
        out.st_target = Tensor(Tensor::Shape{st_rows.size(), G});
        out.st_mask = Tensor(Tensor::Shape{st_rows.size(), G});
        for (std::size_t i = 0; i < st_rows.size(); ++i)
            for (std::size_t g = 0; g < G; ++g) {
                out.st_target.at(i, g) = batch.st_target.at(st_rows[i], g);
                out.st_mask.at(i, g) = batch.st_mask.at(st_rows[i], g);
            }
        parts.push_back(masked_mse(out.st_pred, out.st_target, out.st_mask, st_w));
        for (std::size_t i = 0; i < st_read.size(); ++i) {
            double s = 0.0, n = 0.0;
            for (std::size_t g = 0; g < G; ++g) {
                if (out.st_mask.at(i, g) == 0.0) continue;
                const double e = out.st_pred.value().at(i, g) - out.st_target.at(i, g);
                s += e * e;
                n += 1.0;
            }
            out.terms[n_he_terms + i].value = s / n;
        }
    }
    out.loss = parts.size() == 1 ? parts[0] : ad::add(parts[0], parts[1]);
    return out;
}

PretrainResult pretrain_run(SpatialModel& model, const Corpus& corpus, const ad::OptimizerConfig& optim,
                            const PretrainOptions& options) {
    optim.validate();
    HISTOST_REQUIRE(options.batch_size >= 1 && options.epochs >= 1, "pretrain_run: batch_size and epochs must be positive");
    HISTOST_REQUIRE(!corpus.slides.empty(), "pretrain_run: empty corpus");
    std::vector<AnchorRef> all;
    for (std::size_t s = 0; s < corpus.slides.size(); ++s)
        for (std::size_t i = 0; i < corpus.slides[s].size(); ++i) all.push_back({s, i});
    const std::size_t per_epoch = (all.size() + options.batch_size - 1) / options.batch_size;
    HISTOST_REQUIRE(static_cast<double>(options.epochs) <= optim.total_epochs + 1e-12,
                    "pretrain_run: epochs exceed the optimizer schedule's total_epochs");

    ad::OptimizerState state;
    const int depth = model.max_depth();
    auto lr_scale = [&](const ad::Parameter& p) { return ad::layerwise_scale(p.depth, depth, optim.layer_decay_lambda); };
    auto params = model.params().all();

    PretrainResult result;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        if (options.max_steps && step >= options.max_steps) break;
        std::vector<AnchorRef> order = all;
        Rng rng = make_rng(derive_seed(options.seed, "pretrain/shuffle", epoch), "shuffle");
        shuffle(order.begin(), order.end(), rng);
        double epoch_sum = 0.0;
        std::size_t epoch_steps = 0;
        for (std::size_t b = 0; b < per_epoch; ++b) {
            if (options.max_steps && step >= options.max_steps) break;
            const std::size_t lo = b * options.batch_size, hi = std::min(order.size(), lo + options.batch_size);
            const Batch batch = make_batch(corpus, std::span<const AnchorRef>(order).subspan(lo, hi - lo), model);
            std::vector<MaskPlan> plans;
            for (std::size_t c = 0; c < batch.contexts.size(); ++c)
                plans.push_back(sample_mask(batch.contexts[c], model.config(), derive_seed(options.seed, "pretrain/mask", step * 65536 + c)));
            ad::Tape tape;
            ad::Gradients grads;
            double loss = 0.0;
            try {
                ScopedWarningCapture quiet;
                PretrainLoss l = pretrain_loss(tape, model, batch, plans);
                loss = l.loss.value().item();
                grads = tape.backward(l.loss);
                for (const auto& [p, g] : grads.entries())
                    for (double v : g.data())
                        if (!std::isfinite(v)) throw NumericalError("non-finite gradient for " + p->name);
            } catch (const NumericalError& e) {
                throw NumericalError("pretraining diverged at step " + std::to_string(step) + ": " + e.what());
            }
            const double pos = std::min(optim.total_epochs, static_cast<double>(step + 1) / static_cast<double>(per_epoch));
            ad::adamw_step(params, grads, state, optim, ad::lr_at(optim, pos), lr_scale);
            result.step_loss.push_back(loss);
            if (options.on_step) options.on_step(step, loss);
            epoch_sum += loss;
            ++epoch_steps;
            ++step;
        }
        if (epoch_steps) result.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_steps));
    }
    result.steps = step;
    return result;
}

namespace {

Tensor encode_slide_impl(SpatialModel& model, const Corpus& corpus, std::size_t slide, std::size_t batch_size, bool with_st) {
    HISTOST_REQUIRE(slide < corpus.slides.size(), "encode_slide: slide index out of range");
    HISTOST_REQUIRE(batch_size >= 1, "encode_slide: batch_size must be positive");
    const std::size_t N = corpus.slides[slide].size(), D = model.config().dim;
    Tensor out(Tensor::Shape{N, with_st ? 2 * D : D});
    for (std::size_t lo = 0; lo < N; lo += batch_size) {
        const std::size_t hi = std::min(N, lo + batch_size);
        std::vector<AnchorRef> refs;
        for (std::size_t i = lo; i < hi; ++i) refs.push_back({slide, i});
        const Batch b = assemble(corpus, refs, model, with_st);
        ad::Tape tape;
        const EncodeOutput e = encode(tape, model, b.contexts, b.spots);
        for (std::size_t c = 0; c < b.contexts.size(); ++c) {
            const auto& ctx = b.contexts[c];
            const Tensor& tok = e.tokens.value();
            if (ctx.he_row[ctx.anchor] >= 0) {
                auto r = tok.row(e.state.find(c, ctx.anchor, Modality::HE));
                std::copy(r.begin(), r.end(), out.storage().begin() + static_cast<std::ptrdiff_t>((lo + c) * out.cols()));
            }
            if (with_st && ctx.st_row[ctx.anchor] >= 0) {
                auto r = tok.row(e.state.find(c, ctx.anchor, Modality::ST));
                std::copy(r.begin(), r.end(), out.storage().begin() + static_cast<std::ptrdiff_t>((lo + c) * out.cols() + D));
            }
        }
    }
    return out;
}

}  // namespace

Tensor encode_slide(SpatialModel& model, const Corpus& corpus, std::size_t slide, std::size_t batch_size) {
    return encode_slide_impl(model, corpus, slide, batch_size, true);
}

Tensor encode_slide_he_only(SpatialModel& model, const Corpus& corpus, std::size_t slide, std::size_t batch_size) {
    return encode_slide_impl(model, corpus, slide, batch_size, false);
}

}  // namespace histost::core
