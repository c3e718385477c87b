// SPDX-License-Identifier: Apache-2.0
#include <memory>

#include "histost/common/errors.hpp"
#include "histost/common/fs.hpp"
#include "histost/data/feature_matrix.hpp"
#include "histost/encoders/encoders.hpp"

namespace histost::enc {

const char* to_string(Modality m) { return m == Modality::HE ? "HE" : "ST"; }

const char* to_string(BackendKind k) {
    switch (k) {
        case BackendKind::ToyLinear: return "toy-linear";
        case BackendKind::ToyMlp: return "toy-mlp";
        case BackendKind::Precomputed: return "precomputed";
    }
    return "?";
}

BackendKind backend_kind_from_string(const std::string& s) {
    if (s == "toy-linear") return BackendKind::ToyLinear;
    if (s == "toy-mlp") return BackendKind::ToyMlp;
    if (s == "precomputed") return BackendKind::Precomputed;
    throw ContractViolation("unknown encoder backend \"" + s + "\"");
}

void EmbeddingStore::insert(const std::string& spot_id, std::vector<float> v) {
    HISTOST_REQUIRE(v.size() == dim_, "EmbeddingStore: vector for " + spot_id + " has length " + std::to_string(v.size()) +
                                          ", store dimension is " + std::to_string(dim_));
    HISTOST_REQUIRE(!spot_id.empty() && spot_id.find_first_of(",\n\r") == std::string::npos,
                    "EmbeddingStore: invalid spot id \"" + spot_id + "\"");
    HISTOST_REQUIRE(index_.emplace(spot_id, ids_.size()).second, "EmbeddingStore: duplicate spot id " + spot_id);
    ids_.push_back(spot_id);
    rows_.push_back(std::move(v));
}

const std::vector<float>& EmbeddingStore::at(const std::string& spot_id) const {
    auto it = index_.find(spot_id);
    if (it == index_.end()) throw LookupError("embedding store has no spot_id " + spot_id);
    return rows_[it->second];
}

static fs::path ids_path(const fs::path& path) { return fs::path(path.string() + ".ids.csv"); }

void EmbeddingStore::save(const fs::path& path) const {
    data::FeatureMatrix m;
    m.rows = ids_.size();
    m.cols = dim_;
    m.values.reserve(ids_.size() * dim_);
    std::string ids = "spot_id\n";
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        m.values.insert(m.values.end(), rows_[i].begin(), rows_[i].end());
        ids += ids_[i] + "\n";
    }
    data::write_feature_matrix(path, m);
    write_file_atomic(ids_path(path), ids);
}

EmbeddingStore load_embedding_store(const fs::path& path, std::optional<std::size_t> expected_dim) {
    const data::FeatureMatrix m = data::read_feature_matrix(path);
    const fs::path idp = ids_path(path);
    if (!fs::exists(idp)) throw IoError("missing file: " + idp.string());
    const auto lines = read_lines(idp);
    if (lines.empty() || lines[0] != "spot_id") throw FormatError(idp.string() + ": expected header \"spot_id\"");
    if (lines.size() - 1 != m.rows)
        throw FormatError(idp.string() + ": " + std::to_string(lines.size() - 1) + " ids for " + std::to_string(m.rows) + " rows");
    if (expected_dim && *expected_dim != m.cols)
        throw FormatError(path.string() + ": store dimension " + std::to_string(m.cols) + " but " + std::to_string(*expected_dim) +
                          " was configured");
    EmbeddingStore s(m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        auto r = m.row(i);
        try {
            s.insert(lines[i + 1], std::vector<float>(r.begin(), r.end()));
        } catch (const ContractViolation& e) {
            throw FormatError(idp.string() + ": " + e.what());
        }
    }
    return s;
}

EncoderBackend EncoderBackend::toy_linear(Modality m, std::string prefix, std::size_t in, std::size_t out, ad::ParamStore& store,
                                          Rng& rng, bool frozen, Init init, int depth) {
    HISTOST_REQUIRE(in > 0 && out > 0, "toy_linear: dimensions must be positive");
    EncoderBackend b;
    b.modality_ = m;
    b.kind_ = BackendKind::ToyLinear;
    b.prefix_ = std::move(prefix);
    b.input_dim_ = in;
    b.output_dim_ = out;
    ad::Tensor w(ad::Tensor::Shape{in, out});
    switch (init) {
        case Init::Xavier: w = ad::xavier_uniform(in, out, rng); break;
        case Init::Zero: break;
        case Init::Identity:
            HISTOST_REQUIRE(in == out, "toy_linear: identity init needs equal input and output dimensions");
            for (std::size_t i = 0; i < in; ++i) w.at(i, i) = 1.0;
            break;
    }
    store.add(b.prefix_ + ".w", std::move(w), !frozen, depth);
    store.add(b.prefix_ + ".b", ad::Tensor(ad::Tensor::Shape{out}), !frozen, depth);
    return b;
}

EncoderBackend EncoderBackend::toy_mlp(Modality m, std::string prefix, std::size_t in, std::size_t hidden, std::size_t out,
                                       ad::ParamStore& store, Rng& rng, bool frozen, int depth) {
    HISTOST_REQUIRE(in > 0 && hidden > 0 && out > 0, "toy_mlp: dimensions must be positive");
    EncoderBackend b;
    b.modality_ = m;
    b.kind_ = BackendKind::ToyMlp;
    b.prefix_ = std::move(prefix);
    b.input_dim_ = in;
    b.hidden_dim_ = hidden;
    b.output_dim_ = out;
    store.add(b.prefix_ + ".w1", ad::xavier_uniform(in, hidden, rng), !frozen, depth);
    store.add(b.prefix_ + ".b1", ad::Tensor(ad::Tensor::Shape{hidden}), !frozen, depth);
    store.add(b.prefix_ + ".w2", ad::xavier_uniform(hidden, out, rng), !frozen, depth);
    store.add(b.prefix_ + ".b2", ad::Tensor(ad::Tensor::Shape{out}), !frozen, depth);
    return b;
}

EncoderBackend EncoderBackend::precomputed(Modality m, EmbeddingStore table) {
    HISTOST_REQUIRE(table.dim() > 0, "precomputed backend: store dimension must be positive");
    EncoderBackend b;
    b.modality_ = m;
    b.kind_ = BackendKind::Precomputed;
    b.prefix_ = std::string("precomputed_") + to_string(m);
    b.output_dim_ = table.dim();
    b.table_ = std::make_shared<const EmbeddingStore>(std::move(table));
    return b;
}

bool EncoderBackend::frozen(const ad::ParamStore& store) const {
    if (kind_ == BackendKind::Precomputed) return true;
    for (const auto* p : store.with_prefix(prefix_ + "."))
        if (p->trainable) return false;
    return true;
}

ad::Var EncoderBackend::forward(ad::Tape& tape, ad::ParamStore& store, const EncoderInput& input) const {
    if (kind_ == BackendKind::Precomputed) {
        HISTOST_REQUIRE(!input.spot_ids.empty(), "precomputed backend: spot ids required");
        ad::Tensor out(ad::Tensor::Shape{input.spot_ids.size(), output_dim_});
        for (std::size_t i = 0; i < input.spot_ids.size(); ++i) {
            const auto& v = table_->at(input.spot_ids[i]);
            for (std::size_t j = 0; j < output_dim_; ++j) out.at(i, j) = v[j];
        }
        return tape.constant(std::move(out));
    }
    HISTOST_REQUIRE(input.features.ndim() == 2 && input.features.cols() == input_dim_,
                    std::string(to_string(modality_)) + " encoder expects inputs of width " + std::to_string(input_dim_) + ", got " +
                        input.features.shape_string());
    ad::Var x = tape.constant(input.features);
    if (kind_ == BackendKind::ToyLinear)
        return ad::add_rowvec(ad::matmul(x, tape.param(store.get(prefix_ + ".w"))), tape.param(store.get(prefix_ + ".b")));
    ad::Var h = ad::gelu(ad::add_rowvec(ad::matmul(x, tape.param(store.get(prefix_ + ".w1"))), tape.param(store.get(prefix_ + ".b1"))));
    return ad::add_rowvec(ad::matmul(h, tape.param(store.get(prefix_ + ".w2"))), tape.param(store.get(prefix_ + ".b2")));
}

ad::Tensor EncoderBackend::evaluate(ad::ParamStore& store, const EncoderInput& input) const {
    ad::Tape tape;
    return forward(tape, store, input).value();
}

namespace {

SpotEmbedding encode_one(Modality want, std::span<const double> x, const EncoderBackend& backend, ad::ParamStore& store,
                         const std::string& spot_id) {
    HISTOST_REQUIRE(backend.modality() == want, std::string("backend is for modality ") + to_string(backend.modality()) +
                                                    ", not " + to_string(want));
    EncoderInput in;
    if (backend.kind() == BackendKind::Precomputed) {
        in.spot_ids = {spot_id};
    } else {
        HISTOST_REQUIRE(x.size() == backend.input_dim(), std::string(to_string(want)) + " encoder expects " +
                                                             std::to_string(backend.input_dim()) + " inputs, got " +
                                                             std::to_string(x.size()));
        in.features = ad::Tensor(ad::Tensor::Shape{1, x.size()}, std::vector<double>(x.begin(), x.end()));
    }
    const ad::Tensor y = backend.evaluate(store, in);
    return {want, std::vector<double>(y.data().begin(), y.data().end())};
}

}  // namespace

SpotEmbedding encode_st(std::span<const double> expression, const EncoderBackend& backend, ad::ParamStore& store,
                        const std::string& spot_id) {
    return encode_one(Modality::ST, expression, backend, store, spot_id);
}

SpotEmbedding encode_he(std::span<const double> patch, const EncoderBackend& backend, ad::ParamStore& store,
                        const std::string& spot_id) {
    return encode_one(Modality::HE, patch, backend, store, spot_id);
}

}  // namespace histost::enc
