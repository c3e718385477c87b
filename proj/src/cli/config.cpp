// SPDX-License-Identifier: Apache-2.0
#include "histost/cli/config.hpp"

#include <limits>

#include "histost/common/errors.hpp"

namespace histost::cli {

Block::Block(json source, std::string where, std::string file)
    : source_(std::move(source)), where_(std::move(where)), file_(std::move(file)) {
    if (source_.is_null()) source_ = json::object();
    if (!source_.is_object()) throw InputError(file_ + ": " + (where_.empty() ? "<root>" : where_) + ": expected an object");
}

void Block::fail(const std::string& key, const std::string& message) const {
    throw InputError(file_ + ": " + field(key) + ": " + message);
}

template <class T>
T Block::convert(const std::string& key, const json& v) const {
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) fail(key, "expected true or false");
        return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) fail(key, "expected a string");
        return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) fail(key, "expected a number");
        return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
        if (!v.is_array()) fail(key, "expected an array of strings");
        std::vector<std::string> out;
        for (const auto& e : v) {
            if (!e.is_string()) fail(key, "expected an array of strings");
            out.push_back(e.get<std::string>());
        }
        return out;
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
        if (!v.is_array()) fail(key, "expected an array of non-negative integers");
        std::vector<std::size_t> out;
        for (const auto& e : v) {
            if (!e.is_number_unsigned()) fail(key, "expected an array of non-negative integers");
            out.push_back(e.get<std::size_t>());
        }
        return out;
    } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) fail(key, "expected a non-negative integer");
        const auto x = v.get<std::uint64_t>();
        if (x > std::numeric_limits<T>::max()) fail(key, "value out of range");
        return static_cast<T>(x);
    } else {
        static_assert(std::is_integral_v<T>);
        if (!v.is_number_integer()) fail(key, "expected an integer");
        const auto x = v.get<std::int64_t>();
        if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) fail(key, "value out of range");
        return static_cast<T>(x);
    }
}

template <class T>
T Block::get(const std::string& key, T fallback) {
    used_.insert(key);
    T v = source_.contains(key) ? convert<T>(key, source_.at(key)) : fallback;
    resolved_[key] = v;
    return v;
}

template <class T>
T Block::need(const std::string& key) {
    if (!source_.contains(key)) fail(key, "required field is missing");
    return get<T>(key, T{});
}

template <class T>
std::optional<T> Block::maybe(const std::string& key) {
    used_.insert(key);
    if (!source_.contains(key) || source_.at(key).is_null()) return std::nullopt;
    T v = convert<T>(key, source_.at(key));
    resolved_[key] = v;
    return v;
}

#define HISTOST_BLOCK_INSTANTIATE(T)                                  \
    template T Block::get<T>(const std::string&, T);                  \
    template T Block::need<T>(const std::string&);                    \
    template std::optional<T> Block::maybe<T>(const std::string&);

HISTOST_BLOCK_INSTANTIATE(bool)
HISTOST_BLOCK_INSTANTIATE(int)
HISTOST_BLOCK_INSTANTIATE(double)
HISTOST_BLOCK_INSTANTIATE(std::size_t)
HISTOST_BLOCK_INSTANTIATE(std::string)
HISTOST_BLOCK_INSTANTIATE(std::vector<std::string>)
HISTOST_BLOCK_INSTANTIATE(std::vector<std::size_t>)
#undef HISTOST_BLOCK_INSTANTIATE

Block& Block::child(const std::string& key) {
    for (auto& [k, b] : children_)
        if (k == key) return b;
    used_.insert(key);
    json src = source_.contains(key) ? source_.at(key) : json::object();
    if (!src.is_object()) fail(key, "expected an object");
    children_.emplace_back(key, Block(std::move(src), field(key), file_));
    return children_.back().second;
}

void Block::finish() const {
    for (const auto& [k, v] : source_.items())
        if (!used_.count(k)) throw InputError(file_ + ": " + field(k) + ": unknown key");
    for (const auto& [k, b] : children_) b.finish();
}

json Block::resolved() const {
    json out = resolved_;
    for (const auto& [k, b] : children_) out[k] = b.resolved();
    return out;
}

fs::path RunConfig::path(Block& b, const std::string& key) {
    const fs::path p = b.need<std::string>(key);
    return p.is_absolute() ? p : base_dir / p;
}

std::optional<fs::path> RunConfig::maybe_path(Block& b, const std::string& key) {
    const auto s = b.maybe<std::string>(key);
    if (!s) return std::nullopt;
    const fs::path p = *s;
    return p.is_absolute() ? p : base_dir / p;
}

std::vector<fs::path> RunConfig::paths(Block& b, const std::string& key) {
    if (!b.has(key)) b.fail(key, "required field is missing");
    std::vector<fs::path> out;
    for (const auto& s : b.get<std::vector<std::string>>(key, {})) {
        const fs::path p = s;
        out.push_back(p.is_absolute() ? p : base_dir / p);
    }
    if (out.empty()) b.fail(key, "must list at least one path");
    return out;
}

json RunConfig::resolved() const {
    json out = json::object();
    out["command"] = command;
    out["seed"] = seed;
    out[command] = block.resolved();
    return out;
}

RunConfig load_run_config(const fs::path& file, const std::string& command, std::optional<std::uint64_t> seed_override) {
    std::string text;
    try {
        text = read_file(file);
    } catch (const IoError& e) {
        throw InputError(std::string("--config: ") + e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(file.string() + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) throw InputError(file.string() + ": top level must be an object");
    const std::string name = file.string();
    for (const auto& [k, v] : j.items())
        if (k != "command" && k != "seed" && k != command) throw InputError(name + ": " + k + ": unknown key");
    if (!j.contains("command") || !j.at("command").is_string())
        throw InputError(name + ": command: required string field is missing");
    if (j.at("command").get<std::string>() != command)
        throw InputError(name + ": command: config is for '" + j.at("command").get<std::string>() + "', not '" + command + "'");
    std::uint64_t seed = 0;
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned()) throw InputError(name + ": seed: expected a non-negative integer");
        seed = j.at("seed").get<std::uint64_t>();
    }
    if (seed_override) seed = *seed_override;
    const fs::path base = file.parent_path().empty() ? fs::path(".") : file.parent_path();
    return RunConfig{command, seed, file, base, Block(j.contains(command) ? j.at(command) : json::object(), command, name)};
}

}  // namespace histost::cli
