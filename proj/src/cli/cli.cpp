// SPDX-License-Identifier: Apache-2.0
#include "histost/cli/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <map>
#include <ostream>

#include "commands.hpp"
#include "histost/common/errors.hpp"

namespace histost::cli {

namespace {

using Runner = void (*)(Context&);

const std::map<std::string, Runner>& runners() {
    static const std::map<std::string, Runner> m{
        {"synth", run_synth},     {"pretrain", run_pretrain}, {"finetune", run_finetune}, {"predict", run_predict},
        {"cluster", run_cluster}, {"metrics", run_metrics},   {"survival", run_survival}, {"attribute", run_attribute},
    };
    return m;
}

constexpr const char* kManifest = "manifest.json";
constexpr const char* kResolved = "resolved_config.json";

}  // namespace

void Context::begin() {
    config.block.finish();
    fs::create_directories(out);
    write_file_atomic(out / kResolved, config.resolved().dump(2) + "\n");
}

const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names{"synth", "pretrain", "finetune", "predict",
                                                "cluster", "metrics", "survival", "attribute"};
    return names;
}

std::string usage() {
    std::string s = "usage: histost <subcommand> --config PATH --out DIR [--seed N] [--threads N]\n\nsubcommands:\n";
    for (const auto& n : subcommands()) s += "  " + n + "\n";
    s += "\nexit codes: 0 success, 1 input or validation error, 2 usage error\n";
    return s;
}

json build_manifest(const fs::path& dir, const std::string& command) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
    std::sort(files.begin(), files.end());
    json list = json::array();
    for (const auto& f : files) {
        if (f == kManifest) continue;
        const std::string bytes = read_file(dir / f);
        list.push_back({{"path", f.generic_string()}, {"bytes", bytes.size()}, {"sha256", sha256_hex(bytes)}});
    }
    return {{"command", command}, {"files", list}};
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Spatial histology / transcriptomics pipelines", "histost"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    for (const auto& name : subcommands()) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON config file")->required();
        sub->add_option("--out", out_dir, "output directory")->required();
        sub->add_option("--seed", seed, "master seed; overrides the config");
        sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    }
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << usage();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << usage();
        return kExitUsage;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    try {
        Context ctx{load_run_config(config_path, command, seed), out_dir, out};
        runners().at(command)(ctx);
        write_file_atomic(ctx.out / kManifest, build_manifest(ctx.out, command).dump(2) + "\n");
        out << command << ": wrote " << ctx.out.string() << "\n";
        return kExitOk;
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
    } catch (const ContractViolation& e) {
        err << "error: " << config_path << ": " << e.what() << "\n";
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
    }
    return kExitInput;
}

}  // namespace histost::cli
