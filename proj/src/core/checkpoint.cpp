// SPDX-License-Identifier: Apache-2.0
#include <json.hpp>

#include "histost/common/errors.hpp"
#include "histost/common/fs.hpp"
#include "histost/core/checkpoint.hpp"

namespace histost::core {

namespace {
constexpr std::string_view kMagic = "STRMW";
}

std::string encode_checkpoint(const NamedTensors& tensors) {
    std::string out(kMagic);
    put_u32(out, kCheckpointVersion);
    put_u64(out, tensors.size());
    for (const auto& [name, t] : tensors) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(t.ndim()));
        for (auto e : t.shape()) put_u64(out, e);
        for (double v : t.data()) put_f32(out, static_cast<float>(v));
    }
    return out;
}

NamedTensors decode_checkpoint(std::string_view bytes, const std::string& origin) {
    try {
        if (bytes.substr(0, kMagic.size()) != kMagic) throw FormatError("bad magic");
        std::size_t pos = kMagic.size();
        const auto version = get_u32(bytes, pos);
        if (version != kCheckpointVersion) throw FormatError("unsupported version " + std::to_string(version));
        const auto count = get_u64(bytes, pos);
        NamedTensors out;
        for (std::uint64_t i = 0; i < count; ++i) {
            const auto len = get_u32(bytes, pos);
            if (pos + len > bytes.size()) throw FormatError("truncated name");
            std::string name(bytes.substr(pos, len));
            pos += len;
            const auto rank = get_u32(bytes, pos);
            if (rank > 8) throw FormatError("tensor " + name + " has rank " + std::to_string(rank));
            ad::Tensor::Shape shape;
            std::uint64_t n = 1;
            for (std::uint32_t r = 0; r < rank; ++r) {
                shape.push_back(get_u64(bytes, pos));
                if (shape.back() == 0 || shape.back() > (bytes.size() / 4) + 1) throw FormatError("tensor " + name + " has a bad extent");
                n *= shape.back();
            }
            if (pos + 4 * n > bytes.size()) throw FormatError("tensor " + name + " is truncated");
            std::vector<double> values(n);
            for (auto& v : values) v = get_f32(bytes, pos);
            out.emplace_back(std::move(name), ad::Tensor(std::move(shape), std::move(values)));
        }
        if (pos != bytes.size()) throw FormatError("trailing bytes");
        return out;
    } catch (const FormatError& e) {
        throw FormatError(origin + ": not a valid weight file: " + e.what());
    }
}

NamedTensors collect_params(const ad::ParamStore& store, const std::function<bool(const std::string&)>& keep) {
    NamedTensors out;
    for (const auto* p : store.all())
        if (!keep || keep(p->name)) out.emplace_back(p->name, p->value);
    return out;
}

bool is_backbone_param(const std::string& name) { return name.rfind("decoder_", 0) != 0; }

void save_checkpoint(const fs::path& path, const NamedTensors& tensors) { write_file_atomic(path, encode_checkpoint(tensors)); }

NamedTensors load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path), path.string()); }

std::size_t apply_checkpoint(ad::ParamStore& store, const NamedTensors& tensors) {
    for (const auto& [name, t] : tensors) {
        if (!store.contains(name)) throw FormatError("weight file has unknown tensor " + name);
        if (!store.get(name).value.same_shape(t))
            throw FormatError("weight " + name + " has shape " + t.shape_string() + ", model expects " + store.get(name).value.shape_string());
    }
    for (const auto& [name, t] : tensors) store.get(name).value = t;
    return tensors.size();
}

std::string params_checksum(const ad::ParamStore& store, const std::function<bool(const std::string&)>& keep) {
    return sha256_hex(encode_checkpoint(collect_params(store, keep)));
}

std::string model_config_to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["dim"] = c.dim;
    j["blocks"] = c.blocks;
    j["heads"] = c.heads;
    j["ffn_mult"] = c.ffn_mult;
    j["visible"] = c.visible;
    j["grid_size"] = c.grid_size;
    j["knn"] = c.knn;
    j["slope_rule"] = c.slope_rule;
    j["slopes"] = c.slopes;
    j["he_dim"] = c.he_dim;
    j["st_dim"] = c.st_dim;
    j["patch_dim"] = c.patch_dim;
    j["he_hidden"] = c.he_hidden;
    j["n_genes"] = c.n_genes;
    j["he_backend"] = enc::to_string(c.he_backend);
    j["st_backend"] = enc::to_string(c.st_backend);
    j["st_frozen"] = c.st_frozen;
    j["he_frozen"] = c.he_frozen;
    j["decoder_dim"] = c.decoder_dim;
    j["decoder_blocks"] = c.decoder_blocks;
    j["decoder_heads"] = c.decoder_heads;
    return j.dump(2) + "\n";
}

ModelConfig model_config_from_json(std::string_view text, const std::string& origin) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(origin + ": " + e.what());
    }
    if (!j.is_object()) throw FormatError(origin + ": model config must be a JSON object");
    ModelConfig c;
    try {
        for (const auto& [k, v] : j.items()) {
            if (k == "dim") c.dim = v.get<std::size_t>();
            else if (k == "blocks") c.blocks = v.get<std::size_t>();
            else if (k == "heads") c.heads = v.get<std::size_t>();
            else if (k == "ffn_mult") c.ffn_mult = v.get<std::size_t>();
            else if (k == "visible") c.visible = v.get<std::size_t>();
            else if (k == "grid_size") c.grid_size = v.get<int>();
            else if (k == "knn") c.knn = v.get<std::size_t>();
            else if (k == "slope_rule") c.slope_rule = v.get<std::string>();
            else if (k == "slopes") c.slopes = v.get<std::vector<double>>();
            else if (k == "he_dim") c.he_dim = v.get<std::size_t>();
            else if (k == "st_dim") c.st_dim = v.get<std::size_t>();
            else if (k == "patch_dim") c.patch_dim = v.get<std::size_t>();
            else if (k == "he_hidden") c.he_hidden = v.get<std::size_t>();
            else if (k == "n_genes") c.n_genes = v.get<std::size_t>();
            else if (k == "he_backend") c.he_backend = enc::backend_kind_from_string(v.get<std::string>());
            else if (k == "st_backend") c.st_backend = enc::backend_kind_from_string(v.get<std::string>());
            else if (k == "st_frozen") c.st_frozen = v.get<bool>();
            else if (k == "he_frozen") c.he_frozen = v.get<bool>();
            else if (k == "decoder_dim") c.decoder_dim = v.get<std::size_t>();
            else if (k == "decoder_blocks") c.decoder_blocks = v.get<std::size_t>();
            else if (k == "decoder_heads") c.decoder_heads = v.get<std::size_t>();
            else throw FormatError("unknown key \"" + k + "\"");
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(origin + ": " + e.what());
    } catch (const ContractViolation& e) {
        throw FormatError(origin + ": " + e.what());
    } catch (const FormatError& e) {
        throw FormatError(origin + ": " + e.what());
    }
    return c;
}

}  // namespace histost::core
