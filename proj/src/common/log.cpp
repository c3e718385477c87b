// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <mutex>
#include <vector>

#include "histost/common/log.hpp"

namespace histost {

namespace {
std::mutex g_sink_mutex;
WarningSink g_sink;
}  // namespace

void warn(const std::string& message) {
    std::lock_guard<std::mutex> lock(g_sink_mutex);
    if (g_sink) {
        g_sink(message);
    } else {
        std::cerr << "warning: " << message << '\n';
    }
}

WarningSink set_warning_sink(WarningSink sink) {
    std::lock_guard<std::mutex> lock(g_sink_mutex);
    auto prev = std::move(g_sink);
    g_sink = std::move(sink);
    return prev;
}

ScopedWarningCapture::ScopedWarningCapture() {
    previous_ = set_warning_sink([this](const std::string& m) { messages_.push_back(m); });
}

ScopedWarningCapture::~ScopedWarningCapture() { set_warning_sink(std::move(previous_)); }

}  // namespace histost
