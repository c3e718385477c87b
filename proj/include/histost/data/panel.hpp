// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace histost::data {

/// Ordered list of unique, case-sensitive gene names.
struct GenePanel {
    std::string panel_id;
    std::vector<std::string> genes;

    std::size_t size() const { return genes.size(); }
    /// Throws ContractViolation on duplicate or empty names.
    void validate() const;

    friend bool operator==(const GenePanel&, const GenePanel&) = default;
};

/// Result of merging panels: the lexicographically sorted union and, for each
/// registered panel (in registration order), a presence mask over the union.
struct PanelUnion {
    GenePanel panel;
    std::vector<std::vector<std::uint8_t>> masks;

    /// Index of `gene` in the union panel; throws LookupError if absent.
    std::size_t index_of(const std::string& gene) const;
};

class PanelRegistry {
public:
    void add(GenePanel panel);
    const std::vector<GenePanel>& panels() const { return panels_; }
    bool empty() const { return panels_.empty(); }
    /// Position of a panel by id; throws LookupError if absent.
    std::size_t position(const std::string& panel_id) const;

private:
    std::vector<GenePanel> panels_;
};

/// Union panel id is "union".
PanelUnion panel_union(const PanelRegistry& registry);

/// For each gene of `panel`, its column in `onto`.
std::vector<std::size_t> panel_projection(const GenePanel& panel, const PanelUnion& onto);

}  // namespace histost::data
