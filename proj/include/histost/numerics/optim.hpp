// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "histost/numerics/autodiff.hpp"

namespace histost::ad {

struct OptimizerConfig {
    double base_lr = 1e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double layer_decay_lambda = 0.7;
    double warmup_epochs = 40;
    double total_epochs = 1000;
    int batch_size = 1024;

    /// Throws ContractViolation on out-of-range fields.
    void validate() const;
};

struct MomentPair {
    Tensor m;
    Tensor v;
};

struct OptimizerState {
    /// Keyed by parameter name so the layout is independent of addresses.
    std::map<std::string, MomentPair> moments;
    std::uint64_t step = 0;
};

/// One AdamW update with decoupled weight decay:
///
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr*wd*p - lr * m_hat / (sqrt(v_hat) + eps)
///
/// with bias-corrected m_hat, v_hat. `lr` for a parameter is
/// lr_now * lr_scale(param); `lr_scale` may be empty (all 1). Frozen
/// parameters and parameters without an entry in `grads` are left untouched.
void adamw_step(std::span<Parameter* const> params, const Gradients& grads, OptimizerState& state,
                const OptimizerConfig& config, double lr_now,
                const std::function<double(const Parameter&)>& lr_scale = {});

/// Linear warmup from 0 to base_lr over [0, warmup], then half-cosine decay
/// to 0 at total_epochs. `epoch` may be fractional.
double lr_at(const OptimizerConfig& config, double epoch);

/// lambda^(total_depth - group_depth)
double layerwise_scale(int group_depth, int total_depth, double lambda);

}  // namespace histost::ad
