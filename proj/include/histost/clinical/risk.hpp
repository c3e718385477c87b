// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "histost/clinical/survival.hpp"
#include "histost/numerics/autodiff.hpp"
#include "histost/numerics/params.hpp"

namespace histost::clin {

/// Patch-level inputs of one slide. Either modality may be absent in a
/// unimodal model; present modalities need at least one row.
struct SlideBag {
    std::string slide_id;
    std::optional<ad::Tensor> he;
    std::optional<ad::Tensor> st;
    std::vector<std::array<double, 2>> coords;
};

enum class BagMode { Multimodal, HeOnly, StOnly };
const char* to_string(BagMode m);
BagMode bag_mode_from_string(const std::string& s);

struct RiskConfig {
    BagMode mode = BagMode::Multimodal;
    std::size_t he_dim = 0;
    std::size_t st_dim = 0;
    /// Latent width shared by compression, fusion and pooling.
    std::size_t dim = 32;
    std::size_t n_queries = 64;
    std::size_t ffn_hidden = 64;
    std::size_t pool_hidden = 32;
    std::size_t mlp_hidden = 32;

    void validate() const;
};

/// Parameters, all under "risk.":
///   <m>.q, <m>.wq, <m>.wk, <m>.wv, <m>.bv, <m>.ffn.{w1,b1,w2,b2}   compressor
///   fuse.<m>.{wq,wk,wv,bv}                                         cross-attention
///   pool.<m>.{v,c,w}                                               AbMIL head
///   mlp.{w1,b1,w2,b2}                                              risk MLP
/// with <m> in {he, st}.
class RiskModel {
public:
    RiskModel(RiskConfig config, std::uint64_t seed);

    const RiskConfig& config() const { return config_; }
    ad::ParamStore& params() { return params_; }
    const ad::ParamStore& params() const { return params_; }

private:
    RiskConfig config_;
    ad::ParamStore params_;
};

struct AttentionOut {
    ad::Var out;
    /// Row-stochastic attention matrix.
    ad::Var weights;
};

/// Nq learned queries cross-attend over the patch tokens, then a residual
/// FFN: L = Q + softmax(Q Wq (X Wk)^T / sqrt(D)) (X Wv + bv); L + FFN(L).
AttentionOut perceiver_compress(ad::Tape& tape, RiskModel& model, const std::string& modality, ad::Var tokens);

struct FuseOut {
    ad::Var a, b;
    ad::Var weights_ab, weights_ba;
};

/// One bidirectional cross-attention block with residuals: A attends to B
/// (parameters fuse.he.*) and B attends to A (fuse.st.*).
FuseOut cross_fuse(ad::Tape& tape, RiskModel& model, ad::Var a, ad::Var b);

struct PoolOut {
    /// 1 x D
    ad::Var pooled;
    /// 1 x K
    ad::Var weights;
};

/// a = softmax_k(w^T tanh(V h_k + c)); pooled = sum_k a_k h_k.
PoolOut abmil_pool(ad::Tape& tape, RiskModel& model, const std::string& modality, ad::Var tokens);

struct BagVars {
    std::optional<ad::Var> he;
    std::optional<ad::Var> st;
};

/// compress -> fuse (multimodal only) -> pool per modality -> concat -> MLP.
/// Returns a 1 x 1 risk.
ad::Var risk_forward(ad::Tape& tape, RiskModel& model, const BagVars& bag);
double risk_score(RiskModel& model, const SlideBag& bag);
std::vector<double> risk_scores(RiskModel& model, const std::vector<SlideBag>& bags);

/// Bind a bag's modalities as tape constants, checking the model's mode.
BagVars bind_bag(ad::Tape& tape, const RiskModel& model, const SlideBag& bag);

struct RiskTrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::size_t epochs = 30;
    /// Subjects per Cox batch; 0 = whole cohort.
    std::size_t batch_size = 0;

    void validate() const;
};

struct RiskTrainResult {
    std::vector<double> epoch_loss;
};

/// Cox partial-likelihood training with AdamW. Batches without events are
/// skipped.
RiskTrainResult train_risk(RiskModel& model, const std::vector<SlideBag>& bags, const std::vector<SurvivalRecord>& records,
                           const RiskTrainConfig& config, std::uint64_t seed);

struct AttributionMap {
    std::string slide_id;
    /// Same shapes as the bag inputs.
    std::optional<ad::Tensor> he, st;
    /// Sum over features per patch, min-max normalized per slide over all
    /// patches of all present modalities.
    std::vector<double> he_patch, st_patch;
    std::vector<double> he_normalized, st_normalized;
    double f_x = 0.0;
    double f_baseline = 0.0;
    /// |sum attr - (F(x) - F(0))|
    double residual = 0.0;
    double relative_residual = 0.0;
    std::size_t steps = 0;
};

/// Min-max scaling to [0, 1]; all-equal input maps to 0.5.
std::vector<double> minmax_normalize(const std::vector<double>& v);

/// Scalar function of one input tensor, built on the given tape.
using TapeFn = std::function<ad::Var(ad::Tape&, ad::Var)>;

struct IgResult {
    ad::Tensor attribution;
    double f_x = 0.0;
    double f_baseline = 0.0;
    double residual = 0.0;
};

/// Midpoint Riemann sum of the path integral from the zero baseline:
/// attr = x * (1/m) sum_k grad F((k - 1/2) x / m). Throws NumericalError
/// naming the step on a non-finite gradient.
IgResult integrated_gradients(const TapeFn& f, const ad::Tensor& x, std::size_t steps = 128);

/// IG of the risk score with respect to every patch feature of the bag.
AttributionMap attribute_bag(RiskModel& model, const SlideBag& bag, std::size_t steps = 128);

void write_attribution_csv(const fs::path& path, const AttributionMap& map, const SlideBag& bag);
void write_risk_csv(const fs::path& path, const std::vector<SurvivalRecord>& records);

struct CohortSynthConfig {
    std::size_t n_subjects = 200;
    std::size_t patches = 32;
    std::size_t he_dim = 16;
    std::size_t st_dim = 16;
    /// Log hazard ratio per unit of the latent risk factor.
    double log_hazard = 1.0;
    double base_hazard = 0.05;
    /// Fraction of subjects censored uniformly in (0, time).
    double censor_fraction = 0.3;
    /// Fraction of patches carrying the risk signal.
    double signal_fraction = 0.5;
    double signal = 1.0;
    std::uint64_t seed = 1;
};

struct SynthCohort {
    Cohort cohort;
    std::vector<SlideBag> bags;
    /// Latent risk factor of each subject.
    std::vector<double> risk_factor;
};

/// Subjects with latent z ~ N(0, 1); signal patches are shifted by z along a
/// fixed direction in each modality; event times are exponential with rate
/// base_hazard * exp(log_hazard * z).
SynthCohort synth_cohort(const CohortSynthConfig& config);

}  // namespace histost::clin
