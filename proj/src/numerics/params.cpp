// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "histost/common/errors.hpp"
#include "histost/numerics/params.hpp"

namespace histost::ad {

ParamStore::ParamStore(const ParamStore& other) { *this = other; }

ParamStore& ParamStore::operator=(const ParamStore& other) {
    if (this == &other) return *this;
    params_.clear();
    index_.clear();
    for (const auto& p : other.params_) add(p->name, p->value, p->trainable, p->depth);
    return *this;
}

Parameter& ParamStore::add(std::string name, Tensor value, bool trainable, int depth) {
    if (index_.count(name)) throw ContractViolation("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    params_.push_back(std::make_unique<Parameter>(Parameter{std::move(name), std::move(value), trainable, depth}));
    return *params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("unknown parameter: " + name);
    return *params_[it->second];
}

const Parameter& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("unknown parameter: " + name);
    return *params_[it->second];
}

std::vector<Parameter*> ParamStore::all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParamStore::all() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<Parameter*> ParamStore::with_prefix(const std::string& prefix) {
    std::vector<Parameter*> out;
    for (auto& p : params_)
        if (p->name.compare(0, prefix.size(), prefix) == 0) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParamStore::with_prefix(const std::string& prefix) const {
    std::vector<const Parameter*> out;
    for (const auto& p : params_)
        if (p->name.compare(0, prefix.size(), prefix) == 0) out.push_back(p.get());
    return out;
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
    for (auto* p : with_prefix(prefix)) p->trainable = trainable;
}

std::size_t ParamStore::numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(Tensor::Shape{fan_in, fan_out});
    for (auto& v : t.data()) v = (2.0 * uniform01(rng) - 1.0) * limit;
    return t;
}

Tensor normal_init(Tensor::Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = stddev * standard_normal(rng);
    return t;
}

}  // namespace histost::ad
