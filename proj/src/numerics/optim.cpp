// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>

#include "histost/common/errors.hpp"
#include "histost/numerics/optim.hpp"

namespace histost::ad {

void OptimizerConfig::validate() const {
    HISTOST_REQUIRE(base_lr >= 0.0, "optimizer: base_lr must be non-negative");
    HISTOST_REQUIRE(weight_decay >= 0.0, "optimizer: weight_decay must be non-negative");
    HISTOST_REQUIRE(beta1 > 0.0 && beta1 < 1.0, "optimizer: beta1 must lie in (0,1)");
    HISTOST_REQUIRE(beta2 > 0.0 && beta2 < 1.0, "optimizer: beta2 must lie in (0,1)");
    HISTOST_REQUIRE(eps > 0.0, "optimizer: eps must be positive");
    HISTOST_REQUIRE(layer_decay_lambda > 0.0 && layer_decay_lambda <= 1.0, "optimizer: layer_decay_lambda must lie in (0,1]");
    HISTOST_REQUIRE(warmup_epochs >= 0 && warmup_epochs < total_epochs, "optimizer: need 0 <= warmup_epochs < total_epochs");
    HISTOST_REQUIRE(batch_size >= 1, "optimizer: batch_size must be >= 1");
}

void adamw_step(std::span<Parameter* const> params, const Gradients& grads, OptimizerState& state,
                const OptimizerConfig& config, double lr_now, const std::function<double(const Parameter&)>& lr_scale) {
    HISTOST_REQUIRE(lr_now >= 0.0, "adamw_step: lr_now must be non-negative");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    for (Parameter* p : params) {
        if (!p->trainable) continue;
        const Tensor* g = grads.find(*p);
        if (g == nullptr) continue;
        if (!g->same_shape(p->value)) {
            throw ContractViolation("adamw_step: gradient shape " + g->shape_string() + " does not match parameter " +
                                    p->name + " " + p->value.shape_string());
        }
        auto [it, inserted] = state.moments.try_emplace(p->name);
        MomentPair& mp = it->second;
        if (inserted) {
            mp.m = Tensor(p->value.shape(), 0.0);
            mp.v = Tensor(p->value.shape(), 0.0);
        } else if (!mp.m.same_shape(p->value)) {
            throw ContractViolation("adamw_step: optimizer state shape mismatch for " + p->name);
        }
        const double lr = lr_now * (lr_scale ? lr_scale(*p) : 1.0);
        const double decay = 1.0 - lr * config.weight_decay;
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double gi = (*g)[i];
            mp.m[i] = config.beta1 * mp.m[i] + (1.0 - config.beta1) * gi;
            mp.v[i] = config.beta2 * mp.v[i] + (1.0 - config.beta2) * gi * gi;
            const double mhat = mp.m[i] / bc1;
            const double vhat = mp.v[i] / bc2;
            p->value[i] = p->value[i] * decay - lr * mhat / (std::sqrt(vhat) + config.eps);
        }
    }
}

double lr_at(const OptimizerConfig& config, double epoch) {
    const double total = config.total_epochs;
    const double warm = config.warmup_epochs;
    if (!(epoch >= 0.0 && epoch <= total)) {
        throw ContractViolation("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(config.total_epochs) + "]");
    }
    if (epoch <= warm) return warm > 0.0 ? config.base_lr * epoch / warm : config.base_lr;
    const double progress = (epoch - warm) / (total - warm);
    return config.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double layerwise_scale(int group_depth, int total_depth, double lambda) {
    HISTOST_REQUIRE(lambda > 0.0 && lambda <= 1.0, "layerwise_scale: lambda must lie in (0,1]");
    HISTOST_REQUIRE(group_depth >= 0 && group_depth <= total_depth, "layerwise_scale: need 0 <= group_depth <= total_depth");
    return std::pow(lambda, total_depth - group_depth);
}

}  // namespace histost::ad
