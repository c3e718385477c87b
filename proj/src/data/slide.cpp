// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <charconv>
#include <map>
#include <set>

#include <json.hpp>

#include "histost/common/errors.hpp"
#include "histost/data/feature_matrix.hpp"
#include "histost/data/slide.hpp"

namespace histost::data {

using nlohmann::json;

const char* to_string(CoordinateMode mode) { return mode == CoordinateMode::Grid ? "grid" : "continuous"; }

CoordinateMode coordinate_mode_from_string(const std::string& s) {
    if (s == "grid") return CoordinateMode::Grid;
    if (s == "continuous") return CoordinateMode::Continuous;
    throw FormatError("coordinate_mode must be \"grid\" or \"continuous\", got \"" + s + "\"");
}

bool SlideDataset::has_labels() const {
    return !spots.empty() && std::all_of(spots.begin(), spots.end(), [](const SpotRecord& s) { return s.label.has_value(); });
}

void SlideDataset::validate() const {
    std::set<std::string_view> ids;
    for (const auto& s : spots) {
        if (s.id.empty()) throw FormatError("slide " + slide_id + ": empty spot id");
        if (s.id.find_first_of(",\n\r") != std::string::npos) throw FormatError("slide " + slide_id + ": spot id contains a delimiter: " + s.id);
        if (!ids.insert(s.id).second) throw FormatError("slide " + slide_id + ": duplicate spot_id " + s.id);
        if (s.patch_features.size() != feature_dim) {
            throw FormatError("slide " + slide_id + ": spot " + s.id + " has " + std::to_string(s.patch_features.size()) +
                              " patch features, expected " + std::to_string(feature_dim));
        }
        std::int64_t prev = -1;
        for (const auto& e : s.expression) {
            if (e.gene >= panel.size()) {
                throw FormatError("slide " + slide_id + ": spot " + s.id + " references gene index " + std::to_string(e.gene) +
                                  " but the panel has " + std::to_string(panel.size()) + " genes");
            }
            if (static_cast<std::int64_t>(e.gene) <= prev) throw FormatError("slide " + slide_id + ": spot " + s.id + " has unsorted or duplicate gene entries");
            prev = e.gene;
        }
    }
    try {
        panel.validate();
    } catch (const ContractViolation& e) {
        throw FormatError(e.what());
    }
}

std::size_t SlideDataset::index_of(const std::string& spot_id) const {
    for (std::size_t i = 0; i < spots.size(); ++i)
        if (spots[i].id == spot_id) return i;
    throw LookupError("unknown spot_id: " + spot_id);
}

std::vector<int> label_ids(const SlideDataset& slide, std::vector<std::string>* names) {
    std::set<std::string> distinct;
    for (const auto& s : slide.spots) {
        if (!s.label) throw FormatError("slide " + slide.slide_id + ": spot " + s.id + " has no label");
        distinct.insert(*s.label);
    }
    std::map<std::string, int> id;
    for (const auto& n : distinct) id.emplace(n, static_cast<int>(id.size()));
    std::vector<int> out;
    out.reserve(slide.size());
    for (const auto& s : slide.spots) out.push_back(id.at(*s.label));
    if (names) names->assign(distinct.begin(), distinct.end());
    return out;
}

// ---------------------------------------------------------------------------

fs::path save_slide(const SlideDataset& slide, const fs::path& dir) {
    slide.validate();
    const std::string base = slide.slide_id;
    std::string panel_txt;
    for (const auto& g : slide.panel.genes) panel_txt += g + "\n";

    std::string coords = slide.mode == CoordinateMode::Grid ? "spot_id,row,col\n" : "spot_id,x_um,y_um\n";
    std::string expr = "spot_id,gene_index,count\n";
    std::string labels = "spot_id,label\n";
    FeatureMatrix feats;
    feats.rows = slide.size();
    feats.cols = slide.feature_dim;
    feats.values.reserve(slide.size() * slide.feature_dim);
    for (const auto& s : slide.spots) {
        if (slide.mode == CoordinateMode::Grid) {
            coords += s.id + "," + std::to_string(s.row) + "," + std::to_string(s.col) + "\n";
        } else {
            coords += s.id + "," + format_double(s.x_um) + "," + format_double(s.y_um) + "\n";
        }
        for (const auto& e : s.expression) expr += s.id + "," + std::to_string(e.gene) + "," + std::to_string(e.count) + "\n";
        feats.values.insert(feats.values.end(), s.patch_features.begin(), s.patch_features.end());
        if (s.label) labels += s.id + "," + *s.label + "\n";
    }

    json manifest = {
        {"slide_id", slide.slide_id},
        {"panel_id", slide.panel.panel_id},
        {"panel_file", base + ".panel.txt"},
        {"coords_file", base + ".coords.csv"},
        {"expr_file", base + ".expr.csv"},
        {"features_file", base + ".features.bin"},
        {"coordinate_mode", to_string(slide.mode)},
        {"feature_dim", slide.feature_dim},
    };
    const bool any_label = std::any_of(slide.spots.begin(), slide.spots.end(), [](const SpotRecord& s) { return s.label.has_value(); });
    if (any_label) manifest["labels_file"] = base + ".labels.csv";

    write_file_atomic(dir / (base + ".panel.txt"), panel_txt);
    write_file_atomic(dir / (base + ".coords.csv"), coords);
    write_file_atomic(dir / (base + ".expr.csv"), expr);
    write_feature_matrix(dir / (base + ".features.bin"), feats);
    if (any_label) write_file_atomic(dir / (base + ".labels.csv"), labels);
    const fs::path manifest_path = dir / (base + ".json");
    write_file_atomic(manifest_path, manifest.dump(2) + "\n");
    return manifest_path;
}

namespace {

template <class T>
T parse_number(const std::string& field, const std::string& where) {
    T v{};
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size()) throw FormatError(where + ": not a number: \"" + field + "\"");
    return v;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::vector<std::string>& header) {
    if (!fs::exists(path)) throw IoError("missing file: " + path.string());
    auto lines = read_lines(path);
    if (lines.empty()) throw FormatError(path.string() + ": empty file");
    if (split(lines[0], ',') != header) throw FormatError(path.string() + ": unexpected header \"" + lines[0] + "\"");
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto f = split(lines[i], ',');
        if (f.size() != header.size()) {
            throw FormatError(path.string() + ":" + std::to_string(i + 1) + ": expected " + std::to_string(header.size()) + " fields");
        }
        rows.push_back(std::move(f));
    }
    return rows;
}

std::string require_string(const json& j, const char* key, const fs::path& manifest) {
    if (!j.contains(key) || !j[key].is_string()) throw FormatError(manifest.string() + ": field \"" + key + "\" missing or not a string");
    return j[key].get<std::string>();
}

}  // namespace

SlideDataset load_slide(const fs::path& manifest_path) {
    if (!fs::exists(manifest_path)) throw IoError("missing file: " + manifest_path.string());
    json m;
    try {
        m = json::parse(read_file(manifest_path));
    } catch (const json::parse_error& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
    static const std::set<std::string> known = {"slide_id", "panel_id", "panel_file", "coords_file", "expr_file",
                                                "features_file", "labels_file", "coordinate_mode", "feature_dim"};
    for (const auto& [k, v] : m.items())
        if (!known.count(k)) throw FormatError(manifest_path.string() + ": unknown field \"" + k + "\"");

    const fs::path base = manifest_path.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

    SlideDataset slide;
    slide.slide_id = require_string(m, "slide_id", manifest_path);
    slide.mode = coordinate_mode_from_string(require_string(m, "coordinate_mode", manifest_path));
    if (!m.contains("feature_dim") || !m["feature_dim"].is_number_unsigned()) {
        throw FormatError(manifest_path.string() + ": field \"feature_dim\" missing or not a non-negative integer");
    }
    slide.feature_dim = m["feature_dim"].get<std::size_t>();

    const fs::path panel_path = resolve(require_string(m, "panel_file", manifest_path));
    if (!fs::exists(panel_path)) throw IoError("missing file: " + panel_path.string());
    slide.panel.panel_id = m.contains("panel_id") ? m["panel_id"].get<std::string>() : panel_path.stem().string();
    for (auto& line : read_lines(panel_path))
        if (!line.empty()) slide.panel.genes.push_back(std::move(line));

    const bool grid = slide.mode == CoordinateMode::Grid;
    const fs::path coords_path = resolve(require_string(m, "coords_file", manifest_path));
    auto coords = read_csv(coords_path, grid ? std::vector<std::string>{"spot_id", "row", "col"}
                                             : std::vector<std::string>{"spot_id", "x_um", "y_um"});
    std::unordered_map<std::string, std::size_t> index;
    for (auto& row : coords) {
        SpotRecord s;
        s.id = row[0];
        if (!index.emplace(s.id, slide.spots.size()).second) {
            throw FormatError(coords_path.string() + ": duplicate spot_id " + s.id);
        }
        const std::string where = coords_path.string() + " spot " + s.id;
        if (grid) {
            s.row = parse_number<int>(row[1], where);
            s.col = parse_number<int>(row[2], where);
        } else {
            s.x_um = parse_number<double>(row[1], where);
            s.y_um = parse_number<double>(row[2], where);
        }
        slide.spots.push_back(std::move(s));
    }

    const fs::path expr_path = resolve(require_string(m, "expr_file", manifest_path));
    for (auto& row : read_csv(expr_path, {"spot_id", "gene_index", "count"})) {
        auto it = index.find(row[0]);
        if (it == index.end()) throw FormatError(expr_path.string() + ": unknown spot_id " + row[0]);
        const std::string where = expr_path.string() + " spot " + row[0];
        if (!row[2].empty() && row[2][0] == '-') throw FormatError(where + ": negative count " + row[2]);
        const auto gene = parse_number<std::uint64_t>(row[1], where);
        if (gene >= slide.panel.size()) {
            throw FormatError(where + ": gene index " + row[1] + " out of range for a " + std::to_string(slide.panel.size()) + "-gene panel");
        }
        const auto count = parse_number<std::uint64_t>(row[2], where);
        if (count > 0) slide.spots[it->second].expression.push_back({static_cast<std::uint32_t>(gene), count});
    }
    for (auto& s : slide.spots) {
        std::sort(s.expression.begin(), s.expression.end(), [](const auto& a, const auto& b) { return a.gene < b.gene; });
        for (std::size_t i = 1; i < s.expression.size(); ++i)
            if (s.expression[i].gene == s.expression[i - 1].gene) {
                throw FormatError(expr_path.string() + ": spot " + s.id + " lists gene index " + std::to_string(s.expression[i].gene) + " twice");
            }
    }

    const fs::path feat_path = resolve(require_string(m, "features_file", manifest_path));
    if (!fs::exists(feat_path)) throw IoError("missing file: " + feat_path.string());
    const FeatureMatrix feats = read_feature_matrix(feat_path);
    if (feats.rows != slide.size()) {
        throw FormatError(feat_path.string() + ": " + std::to_string(feats.rows) + " rows but coords list " + std::to_string(slide.size()) + " spots");
    }
    if (feats.cols != slide.feature_dim) {
        throw FormatError(feat_path.string() + ": " + std::to_string(feats.cols) + " columns but feature_dim is " + std::to_string(slide.feature_dim));
    }
    for (std::size_t i = 0; i < slide.size(); ++i) {
        auto r = feats.row(i);
        slide.spots[i].patch_features.assign(r.begin(), r.end());
    }

    if (m.contains("labels_file")) {
        const fs::path lab_path = resolve(require_string(m, "labels_file", manifest_path));
        for (auto& row : read_csv(lab_path, {"spot_id", "label"})) {
            auto it = index.find(row[0]);
            if (it == index.end()) throw FormatError(lab_path.string() + ": unknown spot_id " + row[0]);
            slide.spots[it->second].label = row[1];
        }
    }
    slide.validate();
    return slide;
}

}  // namespace histost::data
