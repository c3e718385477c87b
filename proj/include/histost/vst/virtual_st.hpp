// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "histost/core/pretrain.hpp"
#include "histost/numerics/autodiff.hpp"
#include "histost/numerics/params.hpp"

/// Expression prediction from H&E-only spot embeddings.
namespace histost::vst {

namespace fs = std::filesystem;

enum class HeadKind { Mlp, Linear };

const char* to_string(HeadKind k);
HeadKind head_kind_from_string(const std::string& s);

struct FinetuneConfig {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double lr = 5e-4;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    double weight_decay = 0.05;
    std::size_t hidden = 256;
    HeadKind kind = HeadKind::Mlp;

    /// Throws ContractViolation: lambdas must be >= 0 and not both 0.
    void validate() const;
};

/// Parameters under "head." in their own store:
///   mlp:    y = gelu(x W1 + b1) W2 + b2
///   linear: y = x W + b
struct PredictionHead {
    HeadKind kind = HeadKind::Mlp;
    std::size_t input_dim = 0;
    std::vector<std::string> genes;
    ad::ParamStore params;

    std::size_t output_dim() const { return genes.size(); }
};

/// Xavier weights and zero biases drawn from derive_seed(seed, "head/init").
PredictionHead make_head(HeadKind kind, std::size_t input_dim, std::size_t hidden, std::vector<std::string> genes,
                         std::uint64_t seed);

/// x is n x input_dim; returns n x |genes|.
ad::Var head_forward(ad::Tape& tape, PredictionHead& head, ad::Var x);
ad::Tensor head_predict(PredictionHead& head, const ad::Tensor& x);

/// (1 / NG) sum_ij lambda1 |y - yhat| + lambda2 (y - yhat)^2
ad::Var loss_l1l2(ad::Var pred, const ad::Tensor& target, const FinetuneConfig& config);
double loss_l1l2(const ad::Tensor& pred, const ad::Tensor& target, const FinetuneConfig& config);

/// Inputs and targets for head training, one row per spot carrying ST.
struct HeadData {
    ad::Tensor x;
    ad::Tensor y;
    std::vector<std::string> spot_ids;
};

/// H&E-only anchor embeddings of the given corpus slides paired with the
/// normalized expression of `genes` (union panel columns). Spots without ST
/// are skipped; a target gene missing from a slide panel is a contract
/// violation.
HeadData head_data(core::SpatialModel& model, const core::Corpus& corpus, const std::vector<std::size_t>& slides,
                   const std::vector<std::size_t>& genes, std::size_t batch_size = 16);

struct FinetuneResult {
    PredictionHead head;
    /// Training loss before the first update.
    double initial_loss = 0.0;
    /// Mean batch loss per epoch.
    std::vector<double> epoch_loss;
};

/// AdamW on the head only, cosine decay over `epochs` evaluated at fractional
/// epochs, shuffled batches from derive_seed(seed, "finetune/shuffle", epoch).
/// Throws DomainError when `data` has no rows.
FinetuneResult finetune_head(const HeadData& data, const std::vector<std::string>& genes, const FinetuneConfig& config,
                             std::uint64_t seed);

struct PredictionMatrix {
    std::vector<std::string> spot_ids;
    std::vector<std::string> genes;
    /// spots x genes
    ad::Tensor values;
};

/// CSV: spot_id,<gene...>
void write_predictions_csv(const fs::path& path, const PredictionMatrix& m);

struct GeneScore {
    std::string gene;
    /// Empty when either column has zero variance.
    std::optional<double> pcc;
    std::size_t n_spots = 0;
};

/// Pearson correlation of each column of `pred` with the same column of
/// `truth` (two-pass). Needs at least 3 rows.
std::vector<GeneScore> pcc_genewise(const ad::Tensor& pred, const ad::Tensor& truth, const std::vector<std::string>& genes);

/// CSV: gene,pcc,n_spots (undefined pcc written as NA).
void write_scores_csv(const fs::path& path, const std::vector<GeneScore>& scores);

struct BenchmarkRow {
    std::size_t k = 0;
    /// Median PCC of the k best defined genes; empty when fewer than k are defined.
    std::optional<double> median_pcc;
};

std::vector<BenchmarkRow> benchmark_report(const std::vector<GeneScore>& scores, const std::vector<std::size_t>& top_k);

/// Number of genes whose PCC is undefined.
std::size_t undefined_count(const std::vector<GeneScore>& scores);

/// CSV: k,median_pcc (flagged rows written as NA).
void write_benchmark_csv(const fs::path& path, const std::vector<BenchmarkRow>& rows);

/// Median of a nonempty vector (mean of the two middle values for even size).
double median(std::vector<double> v);

/// Slide-level split: round(test_fraction * n) slides (at least one when
/// n >= 2) are drawn for test from derive_seed(seed, "split/slides").
struct SlideSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};
SlideSplit split_slides(std::size_t n_slides, double test_fraction, std::uint64_t seed);

/// Spatially contiguous split: spots with x below the train_fraction
/// quantile of x go to train, the rest to test.
SlideSplit split_by_x(const std::vector<std::array<double, 2>>& coords, double train_fraction);

}  // namespace histost::vst
