// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>

#include "histost/cli/config.hpp"

namespace histost::cli {

struct Context {
    RunConfig config;
    fs::path out;
    std::ostream& log;

    /// Rejects unread config keys and writes resolved_config.json. Commands
    /// call it after reading their whole block and before doing any work.
    void begin();
    fs::path resolve(Block& b, const std::string& key) { return config.path(b, key); }
};

void run_synth(Context& ctx);
void run_pretrain(Context& ctx);
void run_finetune(Context& ctx);
void run_predict(Context& ctx);
void run_cluster(Context& ctx);
void run_metrics(Context& ctx);
void run_survival(Context& ctx);
void run_attribute(Context& ctx);

}  // namespace histost::cli
