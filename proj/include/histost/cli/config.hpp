// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <json.hpp>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "histost/common/fs.hpp"

namespace histost::cli {

using json = nlohmann::json;

/// Bad input named by file and field; maps to exit code 1.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Typed, key-tracking view of one JSON object of a config file. Every value
/// read is recorded (with its default when absent) so the block can be
/// re-emitted as the resolved config; `finish` rejects keys never read.
class Block {
public:
    Block(json source, std::string where, std::string file);

    bool has(const std::string& key) const { return source_.contains(key); }

    template <class T>
    T get(const std::string& key, T fallback);
    template <class T>
    T need(const std::string& key);
    template <class T>
    std::optional<T> maybe(const std::string& key);

    /// Nested object; an absent key yields an empty block.
    Block& child(const std::string& key);

    /// Throws InputError for keys that were never read, recursively.
    void finish() const;
    json resolved() const;

    /// "file: where.key: message"
    [[noreturn]] void fail(const std::string& key, const std::string& message) const;
    std::string field(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }
    const std::string& file() const { return file_; }

private:
    template <class T>
    T convert(const std::string& key, const json& v) const;

    json source_;
    std::string where_;
    std::string file_;
    json resolved_ = json::object();
    std::set<std::string> used_;
    std::deque<std::pair<std::string, Block>> children_;
};

/// A parsed config file: top-level keys "command", "seed" and one block named
/// after the command.
struct RunConfig {
    std::string command;
    std::uint64_t seed = 0;
    fs::path file;
    /// Directory that relative paths in the config resolve against.
    fs::path base_dir;
    Block block;

    /// Path value of `key` in `b`, resolved against base_dir. The resolved
    /// config keeps the string as written.
    fs::path path(Block& b, const std::string& key);
    std::optional<fs::path> maybe_path(Block& b, const std::string& key);
    std::vector<fs::path> paths(Block& b, const std::string& key);

    json resolved() const;
};

/// Throws InputError for unreadable or malformed files and for a "command"
/// that differs from `command`. `seed_override` replaces the file's seed.
RunConfig load_run_config(const fs::path& file, const std::string& command, std::optional<std::uint64_t> seed_override);

}  // namespace histost::cli
