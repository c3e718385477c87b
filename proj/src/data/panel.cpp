// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <set>

#include "histost/common/errors.hpp"
#include "histost/data/panel.hpp"

namespace histost::data {

void GenePanel::validate() const {
    std::set<std::string_view> seen;
    for (const auto& g : genes) {
        if (g.empty()) throw ContractViolation("panel " + panel_id + ": empty gene name");
        if (!seen.insert(g).second) throw ContractViolation("panel " + panel_id + ": duplicate gene " + g);
    }
}

std::size_t PanelUnion::index_of(const std::string& gene) const {
    auto it = std::lower_bound(panel.genes.begin(), panel.genes.end(), gene);
    if (it == panel.genes.end() || *it != gene) throw LookupError("gene not in union panel: " + gene);
    return static_cast<std::size_t>(it - panel.genes.begin());
}

void PanelRegistry::add(GenePanel panel) {
    panel.validate();
    for (const auto& p : panels_)
        if (p.panel_id == panel.panel_id) throw ContractViolation("duplicate panel id: " + panel.panel_id);
    panels_.push_back(std::move(panel));
}

std::size_t PanelRegistry::position(const std::string& panel_id) const {
    for (std::size_t i = 0; i < panels_.size(); ++i)
        if (panels_[i].panel_id == panel_id) return i;
    throw LookupError("unknown panel id: " + panel_id);
}

PanelUnion panel_union(const PanelRegistry& registry) {
    HISTOST_REQUIRE(!registry.empty(), "panel_union: registry is empty");
    std::set<std::string> all;
    for (const auto& p : registry.panels()) all.insert(p.genes.begin(), p.genes.end());
    PanelUnion u;
    u.panel.panel_id = "union";
    u.panel.genes.assign(all.begin(), all.end());
    for (const auto& p : registry.panels()) {
        std::vector<std::uint8_t> mask(u.panel.size(), 0);
        for (const auto& g : p.genes) mask[u.index_of(g)] = 1;
        u.masks.push_back(std::move(mask));
    }
    return u;
}

std::vector<std::size_t> panel_projection(const GenePanel& panel, const PanelUnion& onto) {
    std::vector<std::size_t> cols;
    cols.reserve(panel.size());
    for (const auto& g : panel.genes) cols.push_back(onto.index_of(g));
    return cols;
}

}  // namespace histost::data
