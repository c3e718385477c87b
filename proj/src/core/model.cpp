// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "histost/common/errors.hpp"
#include "histost/core/model.hpp"

namespace histost::core {

using ad::Tensor;
using ad::Var;

void ModelConfig::validate() const {
    HISTOST_REQUIRE(dim > 0 && heads > 0 && dim % heads == 0, "ModelConfig: dim must be a positive multiple of heads");
    HISTOST_REQUIRE(blocks >= 1 && ffn_mult >= 1, "ModelConfig: blocks and ffn_mult must be positive");
    HISTOST_REQUIRE(grid_size >= 1 && grid_size % 2 == 1, "ModelConfig: grid_size must be odd and positive");
    HISTOST_REQUIRE(visible >= 1 && visible <= static_cast<std::size_t>(grid_size * grid_size),
                    "ModelConfig: visible count must lie in [1, grid_size^2]");
    HISTOST_REQUIRE(knn >= 1, "ModelConfig: knn must be positive");
    HISTOST_REQUIRE(slope_rule == "geometric" || slope_rule == "custom", "ModelConfig: slope_rule must be geometric or custom");
    if (slope_rule == "custom") {
        HISTOST_REQUIRE(slopes.size() == heads, "ModelConfig: custom slopes need one value per head");
        for (double s : slopes) HISTOST_REQUIRE(s >= 0.0 && std::isfinite(s), "ModelConfig: slopes must be finite and non-negative");
    }
    HISTOST_REQUIRE(he_dim > 0 && st_dim > 0, "ModelConfig: he_dim and st_dim must be positive");
    HISTOST_REQUIRE(n_genes > 0, "ModelConfig: n_genes must be positive");
    HISTOST_REQUIRE(he_backend == enc::BackendKind::Precomputed || patch_dim > 0, "ModelConfig: patch_dim must be positive");
    HISTOST_REQUIRE(he_backend != enc::BackendKind::ToyMlp || he_hidden > 0, "ModelConfig: he_hidden must be positive");
    HISTOST_REQUIRE(decoder_dim > 0 && decoder_heads > 0 && decoder_dim % decoder_heads == 0,
                    "ModelConfig: decoder_dim must be a positive multiple of decoder_heads");
}

std::vector<double> ModelConfig::resolved_slopes() const { return slope_rule == "custom" ? slopes : alibi_slopes(heads); }

std::vector<double> alibi_slopes(std::size_t heads) {
    HISTOST_REQUIRE(heads > 0, "alibi_slopes: need at least one head");
    std::vector<double> m(heads);
    for (std::size_t h = 1; h <= heads; ++h) m[h - 1] = std::exp2(-8.0 * static_cast<double>(h) / static_cast<double>(heads));
    return m;
}

std::vector<Tensor> alibi_bias(const std::vector<std::array<double, 2>>& coords, const std::vector<double>& slopes) {
    const std::size_t n = coords.size();
    HISTOST_REQUIRE(n > 0, "alibi_bias: no tokens");
    Tensor dist(Tensor::Shape{n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = std::hypot(coords[i][0] - coords[j][0], coords[i][1] - coords[j][1]);
            dist.at(i, j) = d;
            dist.at(j, i) = d;
        }
    std::vector<Tensor> out;
    out.reserve(slopes.size());
    for (double m : slopes) {
        Tensor b(Tensor::Shape{n, n});
        for (std::size_t k = 0; k < n * n; ++k) b.storage()[k] = m == 0.0 ? 0.0 : -m * dist.data()[k];
        out.push_back(std::move(b));
    }
    return out;
}

std::size_t TokenState::find(std::size_t context, std::size_t member_pos, Modality m) const {
    HISTOST_REQUIRE(context + 1 < segments.size(), "TokenState::find: context out of range");
    for (std::size_t t = segments[context]; t < segments[context + 1]; ++t)
        if (member[t] == member_pos && tags[t] == m) return t;
    throw LookupError("no " + std::string(enc::to_string(m)) + " token for member " + std::to_string(member_pos) + " of context " +
                      std::to_string(context));
}

void add_block_params(ad::ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t hidden, bool mome,
                      int depth, Rng& rng) {
    const Tensor::Shape vec{dim};
    store.add(prefix + ".ln1.g", Tensor(vec, 1.0), true, depth);
    store.add(prefix + ".ln1.b", Tensor(vec), true, depth);
    store.add(prefix + ".attn.wq", ad::xavier_uniform(dim, dim, rng), true, depth);
    store.add(prefix + ".attn.bq", Tensor(vec), true, depth);
    store.add(prefix + ".attn.wk", ad::xavier_uniform(dim, dim, rng), true, depth);
    store.add(prefix + ".attn.wv", ad::xavier_uniform(dim, dim, rng), true, depth);
    store.add(prefix + ".attn.bv", Tensor(vec), true, depth);
    store.add(prefix + ".attn.wo", ad::xavier_uniform(dim, dim, rng), true, depth);
    store.add(prefix + ".attn.bo", Tensor(vec), true, depth);
    store.add(prefix + ".ln2.g", Tensor(vec, 1.0), true, depth);
    store.add(prefix + ".ln2.b", Tensor(vec), true, depth);
    const std::vector<std::string> experts = mome ? std::vector<std::string>{"ffn_he", "ffn_st"} : std::vector<std::string>{"ffn"};
    for (const auto& e : experts) {
        store.add(prefix + "." + e + ".w1", ad::xavier_uniform(dim, hidden, rng), true, depth);
        store.add(prefix + "." + e + ".b1", Tensor(Tensor::Shape{hidden}), true, depth);
        store.add(prefix + "." + e + ".w2", ad::xavier_uniform(hidden, dim, rng), true, depth);
        store.add(prefix + "." + e + ".b2", Tensor(vec), true, depth);
    }
}

SpatialModel::SpatialModel(ModelConfig config, std::uint64_t seed, std::optional<enc::EmbeddingStore> he_store,
                           std::optional<enc::EmbeddingStore> st_store)
    : config_(std::move(config)) {
    config_.validate();
    const auto& c = config_;
    Rng rng = make_rng(seed, "model/init");

    switch (c.he_backend) {
        case enc::BackendKind::ToyMlp:
            he_ = enc::EncoderBackend::toy_mlp(Modality::HE, "he_encoder", c.patch_dim, c.he_hidden, c.he_dim, params_, rng,
                                               c.he_frozen);
            break;
        case enc::BackendKind::ToyLinear:
            he_ = enc::EncoderBackend::toy_linear(Modality::HE, "he_encoder", c.patch_dim, c.he_dim, params_, rng, c.he_frozen);
            break;
        case enc::BackendKind::Precomputed:
            HISTOST_REQUIRE(he_store.has_value(), "SpatialModel: precomputed H&E backend needs an embedding store");
            HISTOST_REQUIRE(he_store->dim() == c.he_dim, "SpatialModel: H&E store dimension disagrees with he_dim");
            he_ = enc::EncoderBackend::precomputed(Modality::HE, std::move(*he_store));
            break;
    }
    switch (c.st_backend) {
        case enc::BackendKind::ToyLinear:
            st_ = enc::EncoderBackend::toy_linear(Modality::ST, "st_encoder", c.n_genes, c.st_dim, params_, rng, c.st_frozen);
            break;
        case enc::BackendKind::ToyMlp:
            st_ = enc::EncoderBackend::toy_mlp(Modality::ST, "st_encoder", c.n_genes, c.st_dim, c.st_dim, params_, rng, c.st_frozen);
            break;
        case enc::BackendKind::Precomputed:
            HISTOST_REQUIRE(st_store.has_value(), "SpatialModel: precomputed ST backend needs an embedding store");
            HISTOST_REQUIRE(st_store->dim() == c.st_dim, "SpatialModel: ST store dimension disagrees with st_dim");
            st_ = enc::EncoderBackend::precomputed(Modality::ST, std::move(*st_store));
            break;
    }

    const std::size_t D = c.dim;
    params_.add("embed.proj_he.w", ad::xavier_uniform(c.he_dim, D, rng), true, 0);
    params_.add("embed.proj_he.b", Tensor(Tensor::Shape{D}), true, 0);
    params_.add("embed.proj_st.w", ad::xavier_uniform(c.st_dim, D, rng), true, 0);
    params_.add("embed.proj_st.b", Tensor(Tensor::Shape{D}), true, 0);
    params_.add("embed.mod_he", ad::normal_init({D}, 0.02, rng), true, 0);
    params_.add("embed.mod_st", ad::normal_init({D}, 0.02, rng), true, 0);
    params_.add("embed.mask_he", ad::normal_init({D}, 0.02, rng), true, 0);
    params_.add("embed.mask_st", ad::normal_init({D}, 0.02, rng), true, 0);
    for (std::size_t i = 0; i < c.blocks; ++i)
        add_block_params(params_, "block" + std::to_string(i), D, D * c.ffn_mult, true, static_cast<int>(i) + 1, rng);

    const int dec_depth = max_depth();
    for (const auto& [name, out] : {std::pair<std::string, std::size_t>{"decoder_he", c.he_dim}, {"decoder_st", c.n_genes}}) {
        params_.add(name + ".in.w", ad::xavier_uniform(D, c.decoder_dim, rng), true, dec_depth);
        params_.add(name + ".in.b", Tensor(Tensor::Shape{c.decoder_dim}), true, dec_depth);
        for (std::size_t j = 0; j < c.decoder_blocks; ++j)
            add_block_params(params_, name + ".block" + std::to_string(j), c.decoder_dim, c.decoder_dim * c.ffn_mult, false,
                             dec_depth, rng);
        params_.add(name + ".head.w", ad::xavier_uniform(c.decoder_dim, out, rng), true, dec_depth);
        params_.add(name + ".head.b", Tensor(Tensor::Shape{out}), true, dec_depth);
    }
}

namespace {

Var ffn(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix, Var x) {
    Var h = ad::gelu(ad::add_rowvec(ad::matmul(x, tape.param(store.get(prefix + ".w1"))), tape.param(store.get(prefix + ".b1"))));
    return ad::add_rowvec(ad::matmul(h, tape.param(store.get(prefix + ".w2"))), tape.param(store.get(prefix + ".b2")));
}

Var row_broadcast(ad::Tape& tape, Var vec, const std::vector<double>& indicator) {
    const std::size_t n = indicator.size();
    Var col = tape.constant(Tensor(Tensor::Shape{n, 1}, indicator));
    return ad::matmul(col, ad::reshape(vec, {1, vec.value().size()}));
}

}  // namespace

TokenState embed_tokens(ad::Tape& tape, SpatialModel& model, const std::vector<ContextInput>& contexts, Var he_emb, Var st_emb,
                        const std::vector<MaskPlan>* plans) {
    HISTOST_REQUIRE(!contexts.empty(), "embed_tokens: empty batch");
    HISTOST_REQUIRE(!plans || plans->size() == contexts.size(), "embed_tokens: one mask plan per context required");
    auto& store = model.params();
    const std::size_t D = model.config().dim;

    TokenState st;
    st.segments.push_back(0);
    std::vector<std::size_t> he_rows, st_rows, order;
    std::vector<double> he_masked, st_masked;
    std::vector<std::size_t> he_order, st_order;  // token index of each HE / ST row
    for (std::size_t c = 0; c < contexts.size(); ++c) {
        const auto& ctx = contexts[c];
        HISTOST_REQUIRE(ctx.size() > 0, "embed_tokens: empty neighbourhood");
        HISTOST_REQUIRE(ctx.he_row.size() == ctx.size() && ctx.st_row.size() == ctx.size(), "embed_tokens: ragged context input");
        HISTOST_REQUIRE(ctx.anchor < ctx.size(), "embed_tokens: anchor out of range");
        std::vector<uint8_t> mh(ctx.size(), 0), ms(ctx.size(), 0);
        if (plans) {
            for (auto m : (*plans)[c].he_masked) mh.at(m) = 1;
            for (auto m : (*plans)[c].st_masked) ms.at(m) = 1;
        }
        for (std::size_t m = 0; m < ctx.size(); ++m)
            HISTOST_REQUIRE(ctx.he_row[m] >= 0 || ctx.st_row[m] >= 0,
                            "embed_tokens: member " + std::to_string(m) + " of context " + std::to_string(c) + " has no modality");
        for (std::size_t m = 0; m < ctx.size(); ++m) {
            if (ctx.he_row[m] < 0) continue;
            he_order.push_back(st.tags.size());
            he_rows.push_back(static_cast<std::size_t>(ctx.he_row[m]));
            he_masked.push_back(mh[m]);
            st.tags.push_back(Modality::HE);
            st.coords.push_back(ctx.coords[m]);
            st.member.push_back(m);
        }
        for (std::size_t m = 0; m < ctx.size(); ++m) {
            if (ctx.st_row[m] < 0) continue;
            st_order.push_back(st.tags.size());
            st_rows.push_back(static_cast<std::size_t>(ctx.st_row[m]));
            st_masked.push_back(ms[m]);
            st.tags.push_back(Modality::ST);
            st.coords.push_back(ctx.coords[m]);
            st.member.push_back(m);
        }
        st.segments.push_back(st.tags.size());
    }

    auto embed = [&](const std::string& tag, Var emb, const std::vector<std::size_t>& rows, const std::vector<double>& masked) {
        Var x = ad::add_rowvec(ad::matmul(ad::gather_rows(emb, rows), tape.param(store.get("embed.proj_" + tag + ".w"))),
                               tape.param(store.get("embed.proj_" + tag + ".b")));
        bool any = false;
        for (double v : masked) any |= v != 0.0;
        if (any) {
            Tensor keep(Tensor::Shape{rows.size(), D}, 1.0);
            for (std::size_t i = 0; i < rows.size(); ++i)
                if (masked[i] != 0.0)
                    for (std::size_t k = 0; k < D; ++k) keep.at(i, k) = 0.0;
            x = ad::add(ad::mul_const(x, keep), row_broadcast(tape, tape.param(store.get("embed.mask_" + tag)), masked));
        }
        return ad::add_rowvec(x, tape.param(store.get("embed.mod_" + tag)));
    };

    std::vector<Var> parts;
    if (!he_rows.empty()) parts.push_back(embed("he", he_emb, he_rows, he_masked));
    if (!st_rows.empty()) parts.push_back(embed("st", st_emb, st_rows, st_masked));
    if (parts.size() == 1) {
        st.tokens = parts[0];
    } else {
        std::vector<std::size_t> perm(st.tags.size());
        for (std::size_t i = 0; i < he_order.size(); ++i) perm[he_order[i]] = i;
        for (std::size_t i = 0; i < st_order.size(); ++i) perm[st_order[i]] = he_order.size() + i;
        st.tokens = ad::gather_rows(ad::concat_rows(parts), perm);
    }
    return st;
}

BatchBias batch_bias(const TokenState& state, const std::vector<double>& slopes) {
    BatchBias out;
    for (std::size_t s = 0; s + 1 < state.segments.size(); ++s) {
        std::vector<std::array<double, 2>> coords(state.coords.begin() + static_cast<std::ptrdiff_t>(state.segments[s]),
                                                  state.coords.begin() + static_cast<std::ptrdiff_t>(state.segments[s + 1]));
        out.push_back(alibi_bias(coords, slopes));
    }
    return out;
}

Var segment_attention(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix, Var x,
                      const std::vector<std::size_t>& segments, const BatchBias& bias, std::size_t heads, AttentionTrace* trace) {
    const std::size_t D = x.cols();
    HISTOST_REQUIRE(heads > 0 && D % heads == 0, "attention: dim must be a multiple of heads");
    HISTOST_REQUIRE(segments.size() >= 2 && segments.back() == x.rows(), "attention: segments must cover all tokens");
    HISTOST_REQUIRE(bias.size() + 1 == segments.size(), "attention: one bias set per segment required");
    const std::size_t dh = D / heads;
    const std::string a = prefix + ".attn";
    Var q = ad::add_rowvec(ad::matmul(x, tape.param(store.get(a + ".wq"))), tape.param(store.get(a + ".bq")));
    Var k = ad::matmul(x, tape.param(store.get(a + ".wk")));
    Var v = ad::add_rowvec(ad::matmul(x, tape.param(store.get(a + ".wv"))), tape.param(store.get(a + ".bv")));
    std::vector<Var> qh(heads), kh(heads), vh(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        qh[h] = heads == 1 ? q : ad::slice_cols(q, h * dh, dh);
        kh[h] = heads == 1 ? k : ad::slice_cols(k, h * dh, dh);
        vh[h] = heads == 1 ? v : ad::slice_cols(v, h * dh, dh);
    }
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool single = segments.size() == 2;
    if (trace) trace->probs.assign(segments.size() - 1, {});
    std::vector<Var> seg_out;
    for (std::size_t s = 0; s + 1 < segments.size(); ++s) {
        const std::size_t b = segments[s], n = segments[s + 1] - segments[s];
        HISTOST_REQUIRE(bias[s].size() == heads, "attention: bias needs one matrix per head");
        std::vector<Var> head_out;
        for (std::size_t h = 0; h < heads; ++h) {
            HISTOST_REQUIRE(bias[s][h].rows() == n && bias[s][h].cols() == n, "attention: bias does not match the token count");
            Var qs = single ? qh[h] : ad::slice_rows(qh[h], b, n);
            Var ks = single ? kh[h] : ad::slice_rows(kh[h], b, n);
            Var vs = single ? vh[h] : ad::slice_rows(vh[h], b, n);
            Var p = ad::softmax_rows(ad::add_const(ad::scale(ad::matmul_nt(qs, ks), inv_sqrt), bias[s][h]));
            if (trace) trace->probs[s].push_back(p.value());
            head_out.push_back(ad::matmul(p, vs));
        }
        seg_out.push_back(heads == 1 ? head_out[0] : ad::concat_cols(head_out));
    }
    Var o = single ? seg_out[0] : ad::concat_rows(seg_out);
    return ad::add_rowvec(ad::matmul(o, tape.param(store.get(a + ".wo"))), tape.param(store.get(a + ".bo")));
}

Var transformer_block(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix, Var h, const std::vector<Modality>& tags,
                      const std::vector<std::size_t>& segments, const BatchBias& bias, std::size_t heads, AttentionTrace* trace) {
    HISTOST_REQUIRE(h.value().ndim() == 2, "block: tokens must be a matrix");
    HISTOST_REQUIRE(store.get(prefix + ".ln1.g").value.size() == h.cols(),
                    "block " + prefix + ": token dim " + std::to_string(h.cols()) + " does not match the block");
    Var x = ad::layer_norm(h, tape.param(store.get(prefix + ".ln1.g")), tape.param(store.get(prefix + ".ln1.b")));
    Var h1 = ad::add(h, segment_attention(tape, store, prefix, x, segments, bias, heads, trace));
    Var x2 = ad::layer_norm(h1, tape.param(store.get(prefix + ".ln2.g")), tape.param(store.get(prefix + ".ln2.b")));
    if (tags.empty()) return ad::add(h1, ffn(tape, store, prefix + ".ffn", x2));

    HISTOST_REQUIRE(tags.size() == h.rows(), "block: one modality tag per token required");
    std::vector<std::size_t> he_idx, st_idx;
    for (std::size_t t = 0; t < tags.size(); ++t) (tags[t] == Modality::HE ? he_idx : st_idx).push_back(t);
    Var out;
    if (st_idx.empty()) {
        out = ffn(tape, store, prefix + ".ffn_he", x2);
    } else if (he_idx.empty()) {
        out = ffn(tape, store, prefix + ".ffn_st", x2);
    } else {
        Var a = ffn(tape, store, prefix + ".ffn_he", ad::gather_rows(x2, he_idx));
        Var b = ffn(tape, store, prefix + ".ffn_st", ad::gather_rows(x2, st_idx));
        std::vector<std::size_t> back(tags.size());
        for (std::size_t i = 0; i < he_idx.size(); ++i) back[he_idx[i]] = i;
        for (std::size_t i = 0; i < st_idx.size(); ++i) back[st_idx[i]] = he_idx.size() + i;
        out = ad::gather_rows(ad::concat_rows(std::vector<Var>{a, b}), back);
    }
    return ad::add(h1, out);
}

Var spatial_block(ad::Tape& tape, SpatialModel& model, std::size_t index, const TokenState& state, Var h, const BatchBias& bias,
                  AttentionTrace* trace) {
    HISTOST_REQUIRE(index < model.config().blocks, "spatial_block: block index out of range");
    return transformer_block(tape, model.params(), "block" + std::to_string(index), h, state.tags, state.segments, bias,
                             model.config().heads, trace);
}

EncodeOutput run_blocks(ad::Tape& tape, SpatialModel& model, TokenState state) {
    const BatchBias bias = batch_bias(state, model.config().resolved_slopes());
    Var h = state.tokens;
    for (std::size_t i = 0; i < model.config().blocks; ++i) h = spatial_block(tape, model, i, state, h, bias);
    return {std::move(state), h};
}

std::vector<double> fused_embedding(const EncodeOutput& out, const std::vector<ContextInput>& contexts, std::size_t c) {
    HISTOST_REQUIRE(c < contexts.size(), "fused_embedding: context out of range");
    const auto& ctx = contexts[c];
    const Tensor& tok = out.tokens.value();
    std::vector<double> v;
    for (Modality m : {Modality::HE, Modality::ST}) {
        const long row = m == Modality::HE ? ctx.he_row[ctx.anchor] : ctx.st_row[ctx.anchor];
        if (row < 0) continue;
        auto r = tok.row(out.state.find(c, ctx.anchor, m));
        v.insert(v.end(), r.begin(), r.end());
    }
    return v;
}

namespace {

bool has_rows(const enc::EncoderInput& in) { return !in.spot_ids.empty() || in.features.ndim() == 2; }

}  // namespace

std::pair<Var, Var> encode_spots(ad::Tape& tape, SpatialModel& model, const SpotBatch& spots) {
    Var he, st;
    if (has_rows(spots.he)) he = model.he_encoder().forward(tape, model.params(), spots.he);
    if (has_rows(spots.st)) st = model.st_encoder().forward(tape, model.params(), spots.st);
    return {he, st};
}

EncodeOutput encode(ad::Tape& tape, SpatialModel& model, const std::vector<ContextInput>& contexts, const SpotBatch& spots) {
    auto [he, st] = encode_spots(tape, model, spots);
    return run_blocks(tape, model, embed_tokens(tape, model, contexts, he, st));
}

}  // namespace histost::core
