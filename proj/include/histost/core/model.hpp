// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "histost/encoders/encoders.hpp"
#include "histost/numerics/autodiff.hpp"
#include "histost/numerics/params.hpp"

namespace histost::core {

using enc::Modality;

struct ModelConfig {
    std::size_t dim = 128;
    std::size_t blocks = 4;
    std::size_t heads = 4;
    std::size_t ffn_mult = 4;
    /// Visible spots per modality during masked pretraining.
    std::size_t visible = 5;
    /// Odd grid window side; 1 removes spatial context.
    int grid_size = 5;
    /// Members per neighbourhood on continuous slides.
    std::size_t knn = 9;
    /// "geometric": m_h = 2^(-8h/H). "custom": `slopes` as given.
    std::string slope_rule = "geometric";
    std::vector<double> slopes;

    /// Spot encoders.
    std::size_t he_dim = enc::kDefaultHeDim;
    std::size_t st_dim = enc::kDefaultStDim;
    std::size_t patch_dim = 0;
    std::size_t he_hidden = 256;
    std::size_t n_genes = 0;
    enc::BackendKind he_backend = enc::BackendKind::ToyMlp;
    enc::BackendKind st_backend = enc::BackendKind::ToyLinear;
    bool st_frozen = true;
    bool he_frozen = false;

    /// Pretraining decoders.
    std::size_t decoder_dim = 64;
    std::size_t decoder_blocks = 2;
    std::size_t decoder_heads = 4;

    /// Throws ContractViolation.
    void validate() const;
    /// Slopes of the spatial blocks. Decoders always use the geometric rule.
    std::vector<double> resolved_slopes() const;
    std::size_t fused_dim() const { return 2 * dim; }
};

/// m_h = 2^(-8h/H), h = 1..H.
std::vector<double> alibi_slopes(std::size_t heads);

/// bias[h](i,j) = -slopes[h] * |c_i - c_j|.
std::vector<ad::Tensor> alibi_bias(const std::vector<std::array<double, 2>>& coords, const std::vector<double>& slopes);

/// A neighbourhood as the model consumes it. Per member: coordinates and the
/// row of the batch's H&E / ST spot-embedding matrix holding that member's
/// embedding, or -1 when the modality is absent for the spot.
struct ContextInput {
    std::vector<std::array<double, 2>> coords;
    std::vector<long> he_row;
    std::vector<long> st_row;
    std::size_t anchor = 0;

    std::size_t size() const { return coords.size(); }
};

/// Per member, whether its H&E / ST token is replaced by the mask token.
struct MaskPlan {
    std::vector<std::size_t> he_visible, he_masked;
    std::vector<std::size_t> st_visible, st_masked;
};

/// Tokens of a batch of contexts, grouped by context; inside one context the
/// H&E tokens come first, then the ST tokens, each in member order.
struct TokenState {
    ad::Var tokens;
    std::vector<Modality> tags;
    std::vector<std::array<double, 2>> coords;
    /// Member position inside its context.
    std::vector<std::size_t> member;
    /// Token offsets of each context; size = contexts + 1.
    std::vector<std::size_t> segments;

    std::size_t size() const { return tags.size(); }
    /// Token index of (context, member, modality); throws LookupError.
    std::size_t find(std::size_t context, std::size_t member_pos, Modality m) const;
};

/// Per segment, per head bias matrices.
using BatchBias = std::vector<std::vector<ad::Tensor>>;

/// Optional capture of attention probabilities: [segment][head].
struct AttentionTrace {
    std::vector<std::vector<ad::Tensor>> probs;
};

/// Parameters and spot encoders of the spatial model.
///
/// Parameter names: he_encoder.*, st_encoder.*, embed.*, block<i>.*,
/// decoder_he.*, decoder_st.*. Depth groups: 0 for encoders and
/// embeddings, i+1 for block i, blocks+1 for decoders.
class SpatialModel {
public:
    /// Creates parameters from `seed`. Precomputed backends need stores.
    explicit SpatialModel(ModelConfig config, std::uint64_t seed, std::optional<enc::EmbeddingStore> he_store = std::nullopt,
                          std::optional<enc::EmbeddingStore> st_store = std::nullopt);

    const ModelConfig& config() const { return config_; }
    ad::ParamStore& params() { return params_; }
    const ad::ParamStore& params() const { return params_; }
    const enc::EncoderBackend& he_encoder() const { return he_; }
    const enc::EncoderBackend& st_encoder() const { return st_; }
    int max_depth() const { return static_cast<int>(config_.blocks) + 1; }

private:
    ModelConfig config_;
    ad::ParamStore params_;
    enc::EncoderBackend he_;
    enc::EncoderBackend st_;
};

/// Adds the parameters of one transformer block under `prefix`. With
/// `mome` the block has two feed-forward experts (ffn_he, ffn_st),
/// otherwise one (ffn).
void add_block_params(ad::ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t hidden, bool mome,
                      int depth, Rng& rng);

/// Projects spot embeddings to tokens and adds modality vectors. With a
/// plan, masked members use the modality's mask token instead of their
/// projected embedding. `he_emb` is S x he_dim, `st_emb` S x st_dim.
TokenState embed_tokens(ad::Tape& tape, SpatialModel& model, const std::vector<ContextInput>& contexts, ad::Var he_emb,
                        ad::Var st_emb, const std::vector<MaskPlan>* plans = nullptr);

/// Bias for every segment of a token state with the given slopes.
BatchBias batch_bias(const TokenState& state, const std::vector<double>& slopes);

/// Multi-head self-attention restricted to each segment, with the segment's
/// bias added to the logits. `x` is already normalized.
ad::Var segment_attention(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix, ad::Var x,
                          const std::vector<std::size_t>& segments, const BatchBias& bias, std::size_t heads,
                          AttentionTrace* trace = nullptr);

/// Pre-norm block: H' = MSA(LN(H)) + H; H_out = FFN_tag(LN(H')) + H'.
/// `tags` selects the expert per row when the block is a MoME block;
/// pass an empty vector for a single-FFN block.
ad::Var transformer_block(ad::Tape& tape, ad::ParamStore& store, const std::string& prefix, ad::Var h,
                          const std::vector<Modality>& tags, const std::vector<std::size_t>& segments, const BatchBias& bias,
                          std::size_t heads, AttentionTrace* trace = nullptr);

/// Spatial block `index` of the model.
ad::Var spatial_block(ad::Tape& tape, SpatialModel& model, std::size_t index, const TokenState& state, ad::Var h,
                      const BatchBias& bias, AttentionTrace* trace = nullptr);

struct EncodeOutput {
    TokenState state;
    /// Final tokens, T x D.
    ad::Var tokens;
};

/// Runs all spatial blocks on the embedded tokens.
EncodeOutput run_blocks(ad::Tape& tape, SpatialModel& model, TokenState state);

/// Anchor embedding of context `c`: concat(HE, ST) when both tokens exist,
/// otherwise the single available token.
std::vector<double> fused_embedding(const EncodeOutput& out, const std::vector<ContextInput>& contexts, std::size_t c);

/// Evaluates the spot encoders for a batch of spot inputs.
struct SpotBatch {
    enc::EncoderInput he;
    enc::EncoderInput st;
};
std::pair<ad::Var, ad::Var> encode_spots(ad::Tape& tape, SpatialModel& model, const SpotBatch& spots);

/// Inference on a batch of contexts: encoders, embedding (no mask), blocks.
EncodeOutput encode(ad::Tape& tape, SpatialModel& model, const std::vector<ContextInput>& contexts, const SpotBatch& spots);

}  // namespace histost::core
