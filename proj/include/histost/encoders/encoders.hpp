// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "histost/common/rng.hpp"
#include "histost/numerics/autodiff.hpp"
#include "histost/numerics/params.hpp"

namespace histost::enc {

namespace fs = std::filesystem;

enum class Modality { HE, ST };
const char* to_string(Modality m);

inline constexpr std::size_t kDefaultStDim = 64;
inline constexpr std::size_t kDefaultHeDim = 768;

struct SpotEmbedding {
    Modality modality = Modality::HE;
    std::vector<double> values;
};

/// Vectors keyed by spot id, all of one declared dimension. On disk: the
/// feature-matrix binary at `path` plus `path` + ".ids.csv" (header
/// `spot_id`, one id per row, row order matching the matrix).
class EmbeddingStore {
public:
    explicit EmbeddingStore(std::size_t dim = 0) : dim_(dim) {}

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }
    const std::vector<std::string>& ids() const { return ids_; }

    /// Throws ContractViolation on a wrong length or a repeated id.
    void insert(const std::string& spot_id, std::vector<float> v);
    /// Throws LookupError naming the id.
    const std::vector<float>& at(const std::string& spot_id) const;
    bool contains(const std::string& spot_id) const { return index_.count(spot_id) > 0; }

    void save(const fs::path& path) const;

private:
    std::size_t dim_;
    std::vector<std::string> ids_;
    std::vector<std::vector<float>> rows_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Loads a store; when `expected_dim` is given a disagreeing file is a
/// FormatError.
EmbeddingStore load_embedding_store(const fs::path& path, std::optional<std::size_t> expected_dim = std::nullopt);

enum class BackendKind { ToyLinear, ToyMlp, Precomputed };
const char* to_string(BackendKind k);
BackendKind backend_kind_from_string(const std::string& s);

enum class Init { Xavier, Zero, Identity };

/// Rows of spot inputs. Toy backends read `features` (n x input_dim);
/// precomputed backends look up `spot_ids`.
struct EncoderInput {
    std::vector<std::string> spot_ids;
    ad::Tensor features;
};

/// A spot-level encoder. Trainable weights live in a caller-owned ParamStore
/// under `prefix` so they share checkpoints and optimizer state with the
/// rest of a model; the backend itself only records names and shapes.
///
///   toy-linear: y = x W + b
///   toy-mlp:    y = gelu(x W1 + b1) W2 + b2
///   precomputed: y = store[spot_id], always frozen
class EncoderBackend {
public:
    static EncoderBackend toy_linear(Modality m, std::string prefix, std::size_t in, std::size_t out, ad::ParamStore& store,
                                     Rng& rng, bool frozen, Init init = Init::Xavier, int depth = 0);
    static EncoderBackend toy_mlp(Modality m, std::string prefix, std::size_t in, std::size_t hidden, std::size_t out,
                                  ad::ParamStore& store, Rng& rng, bool frozen, int depth = 0);
    static EncoderBackend precomputed(Modality m, EmbeddingStore store);

    Modality modality() const { return modality_; }
    BackendKind kind() const { return kind_; }
    const std::string& prefix() const { return prefix_; }
    /// 0 for precomputed backends.
    std::size_t input_dim() const { return input_dim_; }
    std::size_t output_dim() const { return output_dim_; }
    std::size_t hidden_dim() const { return hidden_dim_; }
    /// Precomputed backends are always frozen; toy backends follow the store.
    bool frozen(const ad::ParamStore& store) const;

    /// n x output_dim. Frozen backends yield a constant node.
    ad::Var forward(ad::Tape& tape, ad::ParamStore& store, const EncoderInput& input) const;
    /// Tape-free evaluation.
    ad::Tensor evaluate(ad::ParamStore& store, const EncoderInput& input) const;

private:
    Modality modality_ = Modality::HE;
    BackendKind kind_ = BackendKind::ToyLinear;
    std::string prefix_;
    std::size_t input_dim_ = 0;
    std::size_t hidden_dim_ = 0;
    std::size_t output_dim_ = 0;
    std::shared_ptr<const EmbeddingStore> table_;
};

/// Single-spot helpers. `spot_id` is used by precomputed backends only.
SpotEmbedding encode_st(std::span<const double> expression, const EncoderBackend& backend, ad::ParamStore& store,
                        const std::string& spot_id = {});
SpotEmbedding encode_he(std::span<const double> patch, const EncoderBackend& backend, ad::ParamStore& store,
                        const std::string& spot_id = {});

}  // namespace histost::enc
