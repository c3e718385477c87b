// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "histost/common/rng.hpp"
#include "histost/numerics/tensor.hpp"

namespace histost::ad {

/// A named, optionally trainable weight tensor.
///
/// `depth` is the layer-wise learning-rate group: 0 for input embeddings,
/// increasing through the network, largest for output heads.
struct Parameter {
    std::string name;
    Tensor value;
    bool trainable = true;
    int depth = 0;
};

/// Owns parameters in insertion order; lookups by name. Iteration order is
/// insertion order, which fixes checkpoint layout and optimizer traversal.
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore& other);
    ParamStore& operator=(const ParamStore& other);
    ParamStore(ParamStore&&) noexcept = default;
    ParamStore& operator=(ParamStore&&) noexcept = default;

    Parameter& add(std::string name, Tensor value, bool trainable = true, int depth = 0);

    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::size_t size() const { return params_.size(); }
    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    /// Parameters whose names start with `prefix`.
    std::vector<Parameter*> with_prefix(const std::string& prefix);
    std::vector<const Parameter*> with_prefix(const std::string& prefix) const;

    void set_trainable(const std::string& prefix, bool trainable);
    /// Total scalar count.
    std::size_t numel() const;

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::map<std::string, std::size_t> index_;
};

// Initializers.
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor normal_init(Tensor::Shape shape, double stddev, Rng& rng);

}  // namespace histost::ad
