// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

namespace histost {

using WarningSink = std::function<void(const std::string&)>;

/// Emit a non-fatal warning. Goes to stderr unless a sink is installed.
void warn(const std::string& message);

/// Replace the warning sink; returns the previous one. Pass an empty
/// function to restore stderr output.
WarningSink set_warning_sink(WarningSink sink);

/// Installs a capturing sink for the lifetime of the object.
class ScopedWarningCapture {
public:
    ScopedWarningCapture();
    ~ScopedWarningCapture();
    ScopedWarningCapture(const ScopedWarningCapture&) = delete;
    ScopedWarningCapture& operator=(const ScopedWarningCapture&) = delete;

    const std::vector<std::string>& messages() const { return messages_; }

private:
    std::vector<std::string> messages_;
    WarningSink previous_;
};

}  // namespace histost
