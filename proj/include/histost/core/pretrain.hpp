// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "histost/core/model.hpp"
#include "histost/data/neighborhood.hpp"
#include "histost/data/panel.hpp"
#include "histost/data/slide.hpp"
#include "histost/numerics/optim.hpp"

namespace histost::core {

/// A slide reduced to what the model reads: patch features, normalized
/// expression over the corpus union panel and neighbourhoods.
struct PreparedSlide {
    std::string slide_id;
    std::vector<std::string> spot_ids;
    /// N x C raw patch features.
    ad::Tensor patches;
    /// N x G, ln(1 + 1e4 * count / library) over the union panel.
    ad::Tensor expression;
    /// Spots with zero library size carry no ST modality.
    std::vector<std::uint8_t> has_st;
    /// G entries, 1 where the slide panel measures the gene.
    std::vector<double> gene_mask;
    std::vector<data::Neighborhood> neighborhoods;

    std::size_t size() const { return spot_ids.size(); }
};

struct Corpus {
    data::PanelUnion panels;
    std::vector<PreparedSlide> slides;

    std::size_t n_genes() const { return panels.panel.size(); }
    std::size_t n_anchors() const;
};

/// Grid slides use a grid_size window, continuous slides k-NN with `knn`.
Corpus prepare_corpus(const std::vector<data::SlideDataset>& slides, int grid_size, std::size_t knn);

struct AnchorRef {
    std::size_t slide = 0;
    std::size_t anchor = 0;
};

/// Contexts plus the distinct spots they reference. H&E rows cover every
/// spot; ST rows only spots with the ST modality.
struct Batch {
    std::vector<AnchorRef> anchors;
    std::vector<ContextInput> contexts;
    SpotBatch spots;
    /// ST rows x G normalized expression (reconstruction target).
    ad::Tensor st_target;
    /// ST rows x G presence mask.
    ad::Tensor st_mask;
};

Batch make_batch(const Corpus& corpus, std::span<const AnchorRef> anchors, const SpatialModel& model);

/// Per modality, a uniform subset of `config.visible` members carrying the
/// modality is visible and the rest masked; the two modalities draw
/// independently from `seed`. Contexts with no more carriers than the
/// visible count are left fully visible with a warning. Grid size 1 is a
/// contract violation.
MaskPlan sample_mask(const ContextInput& context, const ModelConfig& config, std::uint64_t seed);

/// sum_i w_i / |mask_i| * sum_g mask_ig (pred_ig - target_ig)^2
ad::Var masked_mse(ad::Var pred, const ad::Tensor& target, const ad::Tensor& mask, const std::vector<double>& row_weights);

/// One masked spot's contribution: loss = sum over terms of weight * value,
/// where value is the spot's mean squared error over its measured entries.
struct LossTerm {
    std::size_t context = 0;
    std::size_t member = 0;
    Modality modality = Modality::HE;
    double value = 0.0;
    double weight = 0.0;
};

struct PretrainLoss {
    ad::Var loss;
    std::vector<LossTerm> terms;
    /// Decoder outputs for masked tokens, rows in `terms` order per modality.
    ad::Var he_pred;
    ad::Var st_pred;
    ad::Tensor he_target;
    ad::Tensor st_target;
    ad::Tensor st_mask;
};

/// Per context: (1/|M_HE|) sum_{i in M_HE} mse_HE(i) + (1/|M_ST|) sum_{i in M_ST} mse_ST(i),
/// averaged over contexts. H&E targets are the detached spot embeddings; ST
/// targets are normalized expression scored only on measured genes.
PretrainLoss pretrain_loss(ad::Tape& tape, SpatialModel& model, const Batch& batch, const std::vector<MaskPlan>& plans);

/// Decoder of one modality: input map, blocks, head at the given tokens.
ad::Var decode(ad::Tape& tape, SpatialModel& model, Modality modality, const TokenState& state, ad::Var tokens,
               const std::vector<std::size_t>& read_tokens);

struct PretrainOptions {
    std::size_t batch_size = 8;
    std::size_t epochs = 1;
    /// 0 = no cap.
    std::size_t max_steps = 0;
    std::uint64_t seed = 0;
    std::function<void(std::size_t step, double loss)> on_step;
};

struct PretrainResult {
    /// Mean step loss per epoch run (the last may be partial).
    std::vector<double> epoch_loss;
    std::vector<double> step_loss;
    std::size_t steps = 0;
};

/// Shuffled anchor batches per epoch, AdamW with lr_at at fractional epoch
/// (step+1)/steps_per_epoch and layer-wise scales. A non-finite loss or
/// gradient aborts with NumericalError naming the step.
PretrainResult pretrain_run(SpatialModel& model, const Corpus& corpus, const ad::OptimizerConfig& optim,
                            const PretrainOptions& options);

/// Fused anchor embedding for every spot of a corpus slide, N x 2D. When an
/// anchor lacks a modality its half is zero.
ad::Tensor encode_slide(SpatialModel& model, const Corpus& corpus, std::size_t slide, std::size_t batch_size = 16);

/// Anchor H&E token for every spot computed from H&E tokens only, N x D.
ad::Tensor encode_slide_he_only(SpatialModel& model, const Corpus& corpus, std::size_t slide, std::size_t batch_size = 16);

}  // namespace histost::core
