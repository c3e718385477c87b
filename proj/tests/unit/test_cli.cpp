// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <map>
#include <sstream>
#include <tuple>

#include "histost/cli/cli.hpp"
#include "histost/common/fs.hpp"
#include "support/temp_dir.hpp"

using namespace histost;
using namespace histost::cli;
using histost::testing::TempDir;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path write_config(const fs::path& dir, const std::string& name, const json& j) {
    const fs::path p = dir / name;
    write_file_atomic(p, j.dump());
    return p;
}

json small_synth() {
    return {{"command", "synth"},
            {"seed", 11},
            {"synth", {{"rows", 8}, {"cols", 8}, {"n_genes", 20}, {"feature_dim", 8}, {"n_slides", 2}}}};
}

/// path -> bytes for every file under dir.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = read_file(e.path());
    return out;
}

}  // namespace

TEST_CASE("usage errors exit 2") {
    CHECK(run({}).code == kExitUsage);
    const Run r = run({"bogus", "--config", "x.json", "--out", "o"});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("usage:") != std::string::npos);
    CHECK(run({"synth", "--out", "o"}).code == kExitUsage);
    CHECK(run({"synth", "--config", "x.json", "--out", "o", "--threads", "0"}).code == kExitUsage);
    CHECK(run({"synth", "--config", "x.json", "--out", "o", "--seed", "abc"}).code == kExitUsage);
    CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("input errors exit 1 and name the offending file or field") {
    TempDir t;
    SUBCASE("missing config file") {
        const Run r = run({"synth", "--config", (t.path() / "none.json").string(), "--out", (t.path() / "o").string()});
        CHECK(r.code == kExitInput);
        CHECK(r.err.find("none.json") != std::string::npos);
    }
    SUBCASE("missing panel file") {
        json j = small_synth();
        j["synth"]["panel_file"] = "panels/missing.txt";
        const auto cfg = write_config(t.path(), "c.json", j);
        const Run r = run({"synth", "--config", cfg.string(), "--out", (t.path() / "o").string()});
        CHECK(r.code == kExitInput);
        CHECK(r.err.find("missing.txt") != std::string::npos);
        CHECK(r.err.find("synth.panel_file") != std::string::npos);
        CHECK_FALSE(fs::exists(t.path() / "o"));
    }
    SUBCASE("unknown key, nested") {
        const json j = {{"command", "pretrain"},
                        {"pretrain", {{"slides", {"a.json"}}, {"model", {{"dimm", 8}}}}}};
        const auto cfg = write_config(t.path(), "c.json", j);
        const Run r = run({"pretrain", "--config", cfg.string(), "--out", (t.path() / "o").string()});
        CHECK(r.code == kExitInput);
        CHECK(r.err.find("pretrain.model.dimm: unknown key") != std::string::npos);
    }
    SUBCASE("unknown top-level key") {
        json j = small_synth();
        j["extra"] = 1;
        const auto cfg = write_config(t.path(), "c.json", j);
        CHECK(run({"synth", "--config", cfg.string(), "--out", (t.path() / "o").string()}).code == kExitInput);
    }
    SUBCASE("wrong type") {
        json j = small_synth();
        j["synth"]["rows"] = "eight";
        const auto cfg = write_config(t.path(), "c.json", j);
        const Run r = run({"synth", "--config", cfg.string(), "--out", (t.path() / "o").string()});
        CHECK(r.code == kExitInput);
        CHECK(r.err.find("synth.rows") != std::string::npos);
    }
    SUBCASE("command mismatch") {
        const auto cfg = write_config(t.path(), "c.json", small_synth());
        CHECK(run({"cluster", "--config", cfg.string(), "--out", (t.path() / "o").string()}).code == kExitInput);
    }
    SUBCASE("invalid value") {
        json j = small_synth();
        j["synth"]["n_domains"] = 0;
        const auto cfg = write_config(t.path(), "c.json", j);
        CHECK(run({"synth", "--config", cfg.string(), "--out", (t.path() / "o").string()}).code == kExitInput);
    }
    SUBCASE("malformed json") {
        write_file_atomic(t.path() / "c.json", "{\"command\": ");
        const Run r = run({"synth", "--config", (t.path() / "c.json").string(), "--out", (t.path() / "o").string()});
        CHECK(r.code == kExitInput);
        CHECK(r.err.find("c.json") != std::string::npos);
    }
}

TEST_CASE("manifest lists every output with its digest") {
    TempDir t;
    const auto cfg = write_config(t.path(), "c.json", small_synth());
    REQUIRE(run({"synth", "--config", cfg.string(), "--out", (t.path() / "o").string()}).code == kExitOk);
    const json m = json::parse(read_file(t.path() / "o" / "manifest.json"));
    CHECK(m["command"] == "synth");
    auto files = snapshot(t.path() / "o");
    files.erase("manifest.json");
    REQUIRE(m["files"].size() == files.size());
    for (const auto& f : m["files"]) {
        const std::string& bytes = files.at(f["path"].get<std::string>());
        CHECK(f["bytes"].get<std::size_t>() == bytes.size());
        CHECK(f["sha256"].get<std::string>() == sha256_hex(bytes));
    }
    CHECK(files.count("resolved_config.json") == 1);
    CHECK(files.count("slides/synth_0.json") == 1);
    CHECK(files.count("slides/synth_1.json") == 1);
}

TEST_CASE("seed override and resolved config") {
    TempDir t;
    const auto cfg = write_config(t.path(), "c.json", small_synth());
    REQUIRE(run({"synth", "--config", cfg.string(), "--out", (t.path() / "a").string()}).code == kExitOk);
    REQUIRE(run({"synth", "--config", cfg.string(), "--out", (t.path() / "b").string(), "--seed", "12"}).code == kExitOk);
    const json ra = json::parse(read_file(t.path() / "a" / "resolved_config.json"));
    const json rb = json::parse(read_file(t.path() / "b" / "resolved_config.json"));
    CHECK(ra["seed"] == 11);
    CHECK(rb["seed"] == 12);
    CHECK(ra["synth"]["base_mean"].is_number());
    CHECK(read_file(t.path() / "a" / "slides" / "synth_0.expr.csv") != read_file(t.path() / "b" / "slides" / "synth_0.expr.csv"));

    // The resolved config is itself a valid config reproducing the run.
    fs::copy_file(t.path() / "a" / "resolved_config.json", t.path() / "r.json");
    REQUIRE(run({"synth", "--config", (t.path() / "r.json").string(), "--out", (t.path() / "c").string()}).code == kExitOk);
    CHECK(snapshot(t.path() / "a") == snapshot(t.path() / "c"));
}

TEST_CASE("pipeline reruns are byte-identical") {
    TempDir t;
    const auto synth = write_config(t.path(), "synth.json", small_synth());
    REQUIRE(run({"synth", "--config", synth.string(), "--out", (t.path() / "s").string()}).code == kExitOk);
    const json pre = {{"command", "pretrain"},
                      {"seed", 3},
                      {"pretrain",
                       {{"slides", {"s/slides/synth_0.json", "s/slides/synth_1.json"}},
                        {"model", {{"dim", 8}, {"blocks", 1}, {"heads", 2}, {"he_hidden", 8}, {"decoder_dim", 8}, {"decoder_blocks", 1}, {"decoder_heads", 2}}},
                        {"max_steps", 3},
                        {"batch_size", 4}}}};
    const json clu = {{"command", "cluster"},
                      {"seed", 3},
                      {"cluster", {{"model_config", "p/model_config.json"}, {"checkpoint", "p/checkpoint.bin"}, {"slide", "s/slides/synth_1.json"}, {"k", 3}}}};
    const json met = {{"command", "metrics"},
                      {"metrics", {{"slide", "s/slides/synth_1.json"}, {"clusters", "c/clusters.csv"}}}};
    const json surv = {{"command", "survival"},
                       {"seed", 4},
                       {"survival",
                        {{"cohort", {{"n_subjects", 40}, {"patches", 6}, {"he_dim", 4}, {"st_dim", 4}}},
                         {"model", {{"dim", 8}, {"n_queries", 4}}},
                         {"train", {{"epochs", 3}}},
                         {"bootstrap", {{"resamples", 20}}}}}};
    const json att = {{"command", "attribute"},
                      {"attribute",
                       {{"risk_model", "v/risk_model.bin"},
                        {"risk_config", "v/risk_config.json"},
                        {"cohort_csv", "v/cohort.csv"},
                        {"bags_dir", "v/bags"},
                        {"slides", {"slide0"}},
                        {"steps", 8}}}};
    const std::vector<std::tuple<std::string, json, std::string>> steps{
        {"pretrain", pre, "p"}, {"cluster", clu, "c"}, {"metrics", met, "m"}, {"survival", surv, "v"}, {"attribute", att, "a"}};
    std::map<std::string, std::map<std::string, std::string>> first;
    for (const auto& [name, cfg, dir] : steps) {
        const auto path = write_config(t.path(), name + ".json", cfg);
        const std::string out = (t.path() / dir).string();
        const Run r = run({name, "--config", path.string(), "--out", out});
        REQUIRE_MESSAGE(r.code == kExitOk, name << ": " << r.err);
        first[name] = snapshot(out);
        const Run again = run({name, "--config", path.string(), "--out", out + "_rerun"});
        REQUIRE(again.code == kExitOk);
        CHECK_MESSAGE(snapshot(out + "_rerun") == first[name], name);
    }
    CHECK(first["pretrain"].count("checkpoint.bin") == 1);
    CHECK(first["metrics"].count("metrics.csv") == 1);
    CHECK(first["survival"].count("cox.csv") == 1);
    CHECK(first["attribute"].count("attributions/slide0.csv") == 1);
}
