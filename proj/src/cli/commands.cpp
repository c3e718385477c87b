// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "histost/clinical/risk.hpp"
#include "histost/clinical/survival.hpp"
#include "histost/common/errors.hpp"
#include "histost/common/fs.hpp"
#include "histost/common/rng.hpp"
#include "histost/core/checkpoint.hpp"
#include "histost/core/pretrain.hpp"
#include "histost/data/expression.hpp"
#include "histost/data/feature_matrix.hpp"
#include "histost/data/slide.hpp"
#include "histost/data/synth.hpp"
#include "histost/domains/cluster.hpp"
#include "histost/domains/metrics.hpp"
#include "histost/domains/stats.hpp"
#include "histost/vst/virtual_st.hpp"

namespace histost::cli {

using ad::Tensor;

namespace {

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::vector<data::SlideDataset> load_slides(const std::vector<fs::path>& paths) {
    std::vector<data::SlideDataset> out;
    for (const auto& p : paths) out.push_back(data::load_slide(p));
    return out;
}

dom::Coords slide_coords(const data::SlideDataset& s) {
    dom::Coords c;
    for (const auto& sp : s.spots)
        c.push_back(s.mode == data::CoordinateMode::Grid
                        ? std::array<double, 2>{static_cast<double>(sp.col), static_cast<double>(sp.row)}
                        : std::array<double, 2>{sp.x_um, sp.y_um});
    return c;
}

data::FeatureMatrix to_feature_matrix(const Tensor& t) {
    data::FeatureMatrix m;
    m.rows = t.rows();
    m.cols = t.cols();
    for (double v : t.data()) m.values.push_back(static_cast<float>(v));
    return m;
}

Tensor from_feature_matrix(const data::FeatureMatrix& m) {
    Tensor t(Tensor::Shape{static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols)});
    for (std::size_t i = 0; i < m.values.size(); ++i) t[i] = m.values[i];
    return t;
}

// ln1p-normalized expression, one row per spot (empty spots stay zero).
Tensor normalized_rows(const data::SlideDataset& s) {
    const Tensor counts = data::dense_counts(s);
    Tensor out(Tensor::Shape{counts.rows(), counts.cols()});
    for (std::size_t i = 0; i < counts.rows(); ++i) {
        const auto v = data::normalize_spot(counts.row(i));
        std::copy(v.begin(), v.end(), out.row(i).begin());
    }
    return out;
}

Tensor select_rows(const Tensor& m, const std::vector<std::size_t>& rows) {
    Tensor out(Tensor::Shape{rows.size(), m.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(m.row(rows[i]).begin(), m.cols(), out.row(i).begin());
    return out;
}

// ---------------------------------------------------------------------------
// Backbone model

struct ModelFiles {
    fs::path config, checkpoint;
};

ModelFiles read_model_files(Context& ctx, Block& b) {
    return {ctx.resolve(b, "model_config"), ctx.resolve(b, "checkpoint")};
}

core::SpatialModel load_model(const ModelFiles& f) {
    const core::ModelConfig mc = core::model_config_from_json(read_file(f.config), f.config.string());
    core::SpatialModel model(mc, 0);
    core::apply_checkpoint(model.params(), core::load_checkpoint(f.checkpoint));
    return model;
}

void require_gene_count(const core::SpatialModel& model, const core::Corpus& corpus, const std::string& where) {
    if (model.config().n_genes != corpus.n_genes())
        throw InputError(where + ": slides span " + std::to_string(corpus.n_genes()) + " union genes but the model expects " +
                         std::to_string(model.config().n_genes));
}

// ---------------------------------------------------------------------------
// Risk model serialization

json risk_config_to_json(const clin::RiskConfig& c) {
    return {{"mode", clin::to_string(c.mode)}, {"he_dim", c.he_dim},         {"st_dim", c.st_dim},
            {"dim", c.dim},                    {"n_queries", c.n_queries},   {"ffn_hidden", c.ffn_hidden},
            {"pool_hidden", c.pool_hidden},    {"mlp_hidden", c.mlp_hidden}};
}

clin::RiskConfig risk_config_from_json(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw InputError(path.string() + ": invalid JSON: " + e.what());
    }
    Block b(j, "", path.string());
    clin::RiskConfig c;
    c.mode = clin::bag_mode_from_string(b.need<std::string>("mode"));
    c.he_dim = b.need<std::size_t>("he_dim");
    c.st_dim = b.need<std::size_t>("st_dim");
    c.dim = b.need<std::size_t>("dim");
    c.n_queries = b.need<std::size_t>("n_queries");
    c.ffn_hidden = b.need<std::size_t>("ffn_hidden");
    c.pool_hidden = b.need<std::size_t>("pool_hidden");
    c.mlp_hidden = b.need<std::size_t>("mlp_hidden");
    b.finish();
    return c;
}

// Bags on disk: <dir>/<slide_id>.he.bin and <slide_id>.st.bin feature matrices.
void write_bag(const fs::path& dir, const clin::SlideBag& bag) {
    if (bag.he) data::write_feature_matrix(dir / (bag.slide_id + ".he.bin"), to_feature_matrix(*bag.he));
    if (bag.st) data::write_feature_matrix(dir / (bag.slide_id + ".st.bin"), to_feature_matrix(*bag.st));
}

clin::SlideBag read_bag(const fs::path& dir, const std::string& slide_id) {
    clin::SlideBag bag;
    bag.slide_id = slide_id;
    const fs::path he = dir / (slide_id + ".he.bin"), st = dir / (slide_id + ".st.bin");
    if (fs::exists(he)) bag.he = from_feature_matrix(data::read_feature_matrix(he));
    if (fs::exists(st)) bag.st = from_feature_matrix(data::read_feature_matrix(st));
    if (!bag.he && !bag.st) throw InputError(dir.string() + ": no bag files for slide '" + slide_id + "'");
    return bag;
}

std::vector<double> times_of(const std::vector<clin::SurvivalRecord>& r) {
    std::vector<double> t;
    for (const auto& x : r) t.push_back(x.time);
    return t;
}

std::vector<int> events_of(const std::vector<clin::SurvivalRecord>& r) {
    std::vector<int> e;
    for (const auto& x : r) e.push_back(x.event);
    return e;
}

}  // namespace

// ---------------------------------------------------------------------------

void run_synth(Context& ctx) {
    Block& b = ctx.config.block;
    data::SynthConfig sc;
    const std::string prefix = b.get<std::string>("slide_prefix", "synth");
    const auto n_slides = b.get<std::size_t>("n_slides", 1);
    sc.rows = b.get<int>("rows", sc.rows);
    sc.cols = b.get<int>("cols", sc.cols);
    sc.n_domains = b.get<int>("n_domains", sc.n_domains);
    sc.n_genes = b.get<int>("n_genes", sc.n_genes);
    sc.feature_dim = b.get<int>("feature_dim", sc.feature_dim);
    sc.program_seed = b.get<std::size_t>("program_seed", ctx.config.seed);
    sc.base_mean = b.get<double>("base_mean", sc.base_mean);
    sc.domain_log_fold = b.get<double>("domain_log_fold", sc.domain_log_fold);
    sc.marker_fraction = b.get<double>("marker_fraction", sc.marker_fraction);
    sc.morph_separation = b.get<double>("morph_separation", sc.morph_separation);
    sc.morph_noise = b.get<double>("morph_noise", sc.morph_noise);
    sc.count_noise = b.get<bool>("count_noise", sc.count_noise);
    sc.joint_fraction = b.get<double>("joint_fraction", sc.joint_fraction);
    sc.joint_coupling = b.get<double>("joint_coupling", sc.joint_coupling);
    sc.coordinate_mode = data::coordinate_mode_from_string(b.get<std::string>("coordinate_mode", "grid"));
    sc.spacing_um = b.get<double>("spacing_um", sc.spacing_um);
    sc.jitter_um = b.get<double>("jitter_um", sc.jitter_um);
    const auto panel_file = ctx.config.maybe_path(b, "panel_file");
    if (n_slides < 1) b.fail("n_slides", "must be >= 1");
    std::vector<std::string> genes;
    if (panel_file) {
        try {
            for (const auto& line : read_lines(*panel_file))
                if (!line.empty()) genes.push_back(line);
        } catch (const IoError& e) {
            b.fail("panel_file", e.what());
        }
        if (genes.size() != static_cast<std::size_t>(sc.n_genes))
            b.fail("panel_file", panel_file->string() + " lists " + std::to_string(genes.size()) + " genes but n_genes is " +
                                     std::to_string(sc.n_genes));
    }
    sc.validate();
    ctx.begin();

    std::string list;
    for (std::size_t i = 0; i < n_slides; ++i) {
        data::SynthConfig one = sc;
        one.slide_id = n_slides == 1 ? prefix : prefix + "_" + std::to_string(i);
        one.seed = derive_seed(ctx.config.seed, "cli/synth_slide", i);
        data::SlideDataset slide = data::synth_tissue(one);
        if (!genes.empty()) {
            slide.panel.genes = genes;
            slide.validate();
        }
        const fs::path manifest = data::save_slide(slide, ctx.out / "slides");
        list += fs::relative(manifest, ctx.out).generic_string() + "\n";
    }
    write_file_atomic(ctx.out / "slides.txt", list);
}

void run_pretrain(Context& ctx) {
    Block& b = ctx.config.block;
    const auto slides_paths = ctx.config.paths(b, "slides");
    Block& m = b.child("model");
    core::ModelConfig mc;
    mc.dim = m.get<std::size_t>("dim", 32);
    mc.blocks = m.get<std::size_t>("blocks", 2);
    mc.heads = m.get<std::size_t>("heads", 4);
    mc.ffn_mult = m.get<std::size_t>("ffn_mult", mc.ffn_mult);
    mc.visible = m.get<std::size_t>("visible", mc.visible);
    mc.grid_size = m.get<int>("grid_size", mc.grid_size);
    mc.knn = m.get<std::size_t>("knn", mc.knn);
    mc.he_hidden = m.get<std::size_t>("he_hidden", 64);
    mc.he_frozen = m.get<bool>("he_frozen", mc.he_frozen);
    mc.st_frozen = m.get<bool>("st_frozen", mc.st_frozen);
    mc.decoder_dim = m.get<std::size_t>("decoder_dim", 32);
    mc.decoder_blocks = m.get<std::size_t>("decoder_blocks", mc.decoder_blocks);
    mc.decoder_heads = m.get<std::size_t>("decoder_heads", mc.decoder_heads);
    Block& o = b.child("optimizer");
    ad::OptimizerConfig oc;
    oc.base_lr = o.get<double>("lr", 1e-3);
    oc.weight_decay = o.get<double>("weight_decay", oc.weight_decay);
    oc.beta1 = o.get<double>("beta1", oc.beta1);
    oc.beta2 = o.get<double>("beta2", oc.beta2);
    oc.eps = o.get<double>("eps", oc.eps);
    oc.layer_decay_lambda = o.get<double>("layer_decay", oc.layer_decay_lambda);
    oc.warmup_epochs = o.get<double>("warmup_epochs", 0.1);
    oc.total_epochs = o.get<double>("total_epochs", 2.0);
    core::PretrainOptions po;
    po.batch_size = b.get<std::size_t>("batch_size", 8);
    po.epochs = b.get<std::size_t>("epochs", 1);
    po.max_steps = b.get<std::size_t>("max_steps", 0);
    po.seed = ctx.config.seed;
    oc.batch_size = static_cast<int>(po.batch_size);
    oc.validate();
    ctx.begin();

    const auto slides = load_slides(slides_paths);
    const core::Corpus corpus = core::prepare_corpus(slides, mc.grid_size, mc.knn);
    mc.patch_dim = slides.front().feature_dim;
    mc.n_genes = corpus.n_genes();
    mc.validate();

    core::SpatialModel model(mc, derive_seed(ctx.config.seed, "cli/model_init"));
    const auto result = core::pretrain_run(model, corpus, oc, po);
    std::string loss = "step,loss\n";
    for (std::size_t i = 0; i < result.step_loss.size(); ++i) loss += std::to_string(i) + "," + format_double(result.step_loss[i]) + "\n";
    write_file_atomic(ctx.out / "loss.csv", loss);
    write_file_atomic(ctx.out / "model_config.json", core::model_config_to_json(mc));
    core::save_checkpoint(ctx.out / "checkpoint.bin", core::collect_params(model.params()));
    ctx.log << "pretrain: " << result.steps << " steps, loss " << format_double(result.step_loss.front()) << " -> "
            << format_double(result.step_loss.back()) << "\n";
}

namespace {

vst::FinetuneConfig read_head_config(Block& h) {
    vst::FinetuneConfig c;
    c.kind = vst::head_kind_from_string(h.get<std::string>("kind", "mlp"));
    c.hidden = h.get<std::size_t>("hidden", 64);
    c.lambda1 = h.get<double>("lambda1", c.lambda1);
    c.lambda2 = h.get<double>("lambda2", c.lambda2);
    c.lr = h.get<double>("lr", 1e-3);
    c.epochs = h.get<std::size_t>("epochs", 30);
    c.batch_size = h.get<std::size_t>("batch_size", c.batch_size);
    c.weight_decay = h.get<double>("weight_decay", c.weight_decay);
    c.validate();
    return c;
}

/// Top-k HVGs over the spots with expression of the given slides, among
/// genes measured on all of them.
std::vector<std::size_t> training_hvgs(const core::Corpus& corpus, const std::vector<std::size_t>& slides, std::size_t k) {
    std::vector<std::size_t> measured;
    for (std::size_t g = 0; g < corpus.n_genes(); ++g)
        if (std::all_of(slides.begin(), slides.end(), [&](std::size_t s) { return corpus.slides[s].gene_mask[g] != 0.0; }))
            measured.push_back(g);
    std::vector<std::vector<double>> rows;
    for (std::size_t s : slides) {
        const auto& ps = corpus.slides[s];
        for (std::size_t i = 0; i < ps.size(); ++i) {
            if (!ps.has_st[i]) continue;
            std::vector<double> r;
            for (std::size_t g : measured) r.push_back(ps.expression.at(i, g));
            rows.push_back(std::move(r));
        }
    }
    if (rows.size() < 2 || measured.empty()) throw DomainError("finetune: too few spots or genes to rank HVGs");
    Tensor m(Tensor::Shape{rows.size(), measured.size()});
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    std::vector<std::size_t> out;
    for (std::size_t j : data::select_hvg(m, std::min(k, measured.size()))) out.push_back(measured[j]);
    return out;
}

}  // namespace

void run_finetune(Context& ctx) {
    Block& b = ctx.config.block;
    const ModelFiles mf = read_model_files(ctx, b);
    const auto slide_paths = ctx.config.paths(b, "slides");
    const auto gene_names = b.maybe<std::vector<std::string>>("genes");
    const auto top_hvg = b.get<std::size_t>("top_hvg", 50);
    const auto encode_batch = b.get<std::size_t>("encode_batch", 32);
    const vst::FinetuneConfig fc = read_head_config(b.child("head"));
    if (top_hvg < 1) b.fail("top_hvg", "must be >= 1");
    ctx.begin();

    core::SpatialModel model = load_model(mf);
    const auto slides = load_slides(slide_paths);
    const core::Corpus corpus = core::prepare_corpus(slides, model.config().grid_size, model.config().knn);
    require_gene_count(model, corpus, ctx.config.file.string());
    std::vector<std::size_t> all(slides.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<std::size_t> cols;
    if (gene_names) {
        for (const auto& g : *gene_names) {
            try {
                cols.push_back(corpus.panels.index_of(g));
            } catch (const LookupError&) {
                throw InputError(ctx.config.file.string() + ": finetune.genes: gene '" + g + "' is not in the slide panels");
            }
        }
    } else {
        cols = training_hvgs(corpus, all, top_hvg);
    }
    std::vector<std::string> genes;
    for (std::size_t c : cols) genes.push_back(corpus.panels.panel.genes[c]);

    const std::string before = core::params_checksum(model.params());
    const vst::HeadData data = vst::head_data(model, corpus, all, cols, encode_batch);
    const auto res = vst::finetune_head(data, genes, fc, derive_seed(ctx.config.seed, "cli/finetune"));
    const std::string after = core::params_checksum(model.params());

    core::save_checkpoint(ctx.out / "head.bin", core::collect_params(res.head.params));
    const json head = {{"kind", vst::to_string(fc.kind)}, {"hidden", fc.hidden}, {"input_dim", res.head.input_dim}, {"genes", genes}};
    write_file_atomic(ctx.out / "head.json", dump(head));
    std::string loss = "epoch,loss\n";
    for (std::size_t i = 0; i < res.epoch_loss.size(); ++i) loss += std::to_string(i) + "," + format_double(res.epoch_loss[i]) + "\n";
    write_file_atomic(ctx.out / "loss.csv", loss);
    const json summary = {{"spots", data.spot_ids.size()},
                          {"initial_loss", res.initial_loss},
                          {"final_loss", res.epoch_loss.back()},
                          {"backbone_checksum_before", before},
                          {"backbone_checksum_after", after}};
    write_file_atomic(ctx.out / "summary.json", dump(summary));
}

void run_predict(Context& ctx) {
    Block& b = ctx.config.block;
    const ModelFiles mf = read_model_files(ctx, b);
    const fs::path head_bin = ctx.resolve(b, "head");
    const fs::path head_json = ctx.resolve(b, "head_config");
    const auto slide_paths = ctx.config.paths(b, "slides");
    const auto top_k = b.get<std::vector<std::size_t>>("top_k", {10, 50});
    const auto encode_batch = b.get<std::size_t>("encode_batch", 32);
    ctx.begin();

    core::SpatialModel model = load_model(mf);
    json hj;
    try {
        hj = json::parse(read_file(head_json));
    } catch (const json::parse_error& e) {
        throw InputError(head_json.string() + ": invalid JSON: " + e.what());
    }
    Block hb(hj, "", head_json.string());
    const auto kind = vst::head_kind_from_string(hb.need<std::string>("kind"));
    const auto hidden = hb.need<std::size_t>("hidden");
    const auto input_dim = hb.need<std::size_t>("input_dim");
    const auto genes = hb.need<std::vector<std::string>>("genes");
    hb.finish();
    vst::PredictionHead head = vst::make_head(kind, input_dim, hidden, genes, 0);
    core::apply_checkpoint(head.params, core::load_checkpoint(head_bin));

    const auto slides = load_slides(slide_paths);
    const core::Corpus corpus = core::prepare_corpus(slides, model.config().grid_size, model.config().knn);
    require_gene_count(model, corpus, ctx.config.file.string());
    std::string bench = "slide_id,k,median_pcc,undefined\n";
    for (std::size_t s = 0; s < corpus.slides.size(); ++s) {
        const auto& ps = corpus.slides[s];
        const Tensor emb = core::encode_slide_he_only(model, corpus, s, encode_batch);
        const Tensor pred = vst::head_predict(head, emb);
        vst::write_predictions_csv(ctx.out / ("predictions_" + ps.slide_id + ".csv"), {ps.spot_ids, genes, pred});

        std::vector<std::size_t> cols;
        bool measured = true;
        for (const auto& g : genes) {
            try {
                cols.push_back(corpus.panels.index_of(g));
                measured = measured && ps.gene_mask[cols.back()] != 0.0;
            } catch (const LookupError&) {
                measured = false;
            }
        }
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < ps.size(); ++i)
            if (ps.has_st[i]) rows.push_back(i);
        if (!measured || rows.size() < 3) continue;
        Tensor truth(Tensor::Shape{rows.size(), genes.size()});
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < cols.size(); ++j) truth.at(i, j) = ps.expression.at(rows[i], cols[j]);
        const auto scores = vst::pcc_genewise(select_rows(pred, rows), truth, genes);
        vst::write_scores_csv(ctx.out / ("scores_" + ps.slide_id + ".csv"), scores);
        for (const auto& r : vst::benchmark_report(scores, top_k))
            bench += ps.slide_id + "," + std::to_string(r.k) + "," + (r.median_pcc ? format_double(*r.median_pcc) : "NA") + "," +
                     std::to_string(vst::undefined_count(scores)) + "\n";
    }
    write_file_atomic(ctx.out / "benchmark.csv", bench);
}

void run_cluster(Context& ctx) {
    Block& b = ctx.config.block;
    const fs::path slide_path = ctx.resolve(b, "slide");
    const std::string source = b.get<std::string>("source", "fused");
    const auto k = b.need<std::size_t>("k");
    const auto n_init = b.get<std::size_t>("n_init", 10);
    const auto pca = b.get<std::size_t>("pca_components", source == "expression_pca" ? 50 : 0);
    const auto encode_batch = b.get<std::size_t>("encode_batch", 32);
    std::optional<ModelFiles> mf;
    if (source == "fused" || source == "he_only")
        mf = read_model_files(ctx, b);
    else if (source != "expression_pca")
        b.fail("source", "expected fused, he_only or expression_pca");
    if (k < 1) b.fail("k", "must be >= 1");
    ctx.begin();

    const data::SlideDataset slide = data::load_slide(slide_path);
    Tensor x;
    if (mf) {
        core::SpatialModel model = load_model(*mf);
        const core::Corpus corpus = core::prepare_corpus({slide}, model.config().grid_size, model.config().knn);
        require_gene_count(model, corpus, ctx.config.file.string());
        x = source == "fused" ? core::encode_slide(model, corpus, 0, encode_batch)
                              : core::encode_slide_he_only(model, corpus, 0, encode_batch);
    } else {
        x = normalized_rows(slide);
    }
    if (pca > 0) x = dom::pca_project(x, std::min(pca, x.cols()));
    dom::KMeansOptions ko;
    ko.n_init = n_init;
    const auto res = dom::kmeans(x, k, ctx.config.seed, ko);
    std::string csv = "spot_id,cluster\n";
    for (std::size_t i = 0; i < slide.size(); ++i) csv += slide.spots[i].id + "," + std::to_string(res.labels[i]) + "\n";
    write_file_atomic(ctx.out / "clusters.csv", csv);
    data::write_feature_matrix(ctx.out / "embedding.bin", to_feature_matrix(x));
}

void run_metrics(Context& ctx) {
    Block& b = ctx.config.block;
    const fs::path slide_path = ctx.resolve(b, "slide");
    const fs::path clusters_path = ctx.resolve(b, "clusters");
    const auto embedding_path = ctx.config.maybe_path(b, "embedding");
    const auto pas_k = b.get<std::size_t>("pas_k", 10);
    const auto pas_threshold = b.get<std::size_t>("pas_threshold", 6);
    const bool de = b.get<bool>("de", true);
    const auto gene_sets_path = ctx.config.maybe_path(b, "gene_sets");
    const double de_q = b.get<double>("de_q", 0.05);
    ctx.begin();

    const data::SlideDataset slide = data::load_slide(slide_path);
    const auto lines = read_lines(clusters_path);
    if (lines.empty() || lines[0] != "spot_id,cluster") throw FormatError(clusters_path.string() + ":1: header must be spot_id,cluster");
    dom::Labels pred(slide.size(), -1);
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        const auto f = split(lines[ln], ',');
        if (f.size() != 2) throw FormatError(clusters_path.string() + ":" + std::to_string(ln + 1) + ": expected 2 fields");
        std::size_t i = 0;
        try {
            i = slide.index_of(f[0]);
            pred[i] = std::stoi(f[1]);
        } catch (const LookupError&) {
            throw FormatError(clusters_path.string() + ":" + std::to_string(ln + 1) + ": unknown spot '" + f[0] + "'");
        } catch (const std::logic_error&) {
            throw FormatError(clusters_path.string() + ":" + std::to_string(ln + 1) + ": cluster is not an integer");
        }
    }
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] < 0) throw FormatError(clusters_path.string() + ": spot '" + slide.spots[i].id + "' has no cluster");

    const auto na = [](std::optional<double> v) { return v ? format_double(*v) : std::string("NA"); };
    std::map<std::string, std::optional<double>> m;
    for (const char* k : {"NMI", "ARI", "FMI", "HOM", "COM"}) m[k] = std::nullopt;
    if (slide.has_labels()) {
        const auto e = dom::external_metrics(pred, data::label_ids(slide));
        m["NMI"] = e.nmi;
        m["ARI"] = e.ari;
        m["FMI"] = e.fmi;
        m["HOM"] = e.hom;
        m["COM"] = e.com;
    }
    const auto coords = slide_coords(slide);
    m["CHAOS"] = dom::chaos(pred, coords);
    m["PAS"] = dom::pas(pred, coords, pas_k, pas_threshold);
    const Tensor norm = normalized_rows(slide);
    const Tensor features = embedding_path ? from_feature_matrix(data::read_feature_matrix(*embedding_path)) : norm;
    if (features.rows() != slide.size()) throw InputError(embedding_path->string() + ": row count does not match the slide");
    const std::set<int> distinct(pred.begin(), pred.end());
    m["ASW"] = distinct.size() >= 2 ? std::optional<double>(dom::asw(pred, features)) : std::nullopt;
    std::string out = "metric,value\n";
    for (const char* k : {"NMI", "ARI", "FMI", "HOM", "COM", "CHAOS", "PAS", "ASW"}) out += std::string(k) + "," + na(m[k]) + "\n";
    write_file_atomic(ctx.out / "metrics.csv", out);

    if (!de || distinct.size() < 2) return;
    std::map<std::string, std::vector<std::string>> sets;
    if (gene_sets_path) {
        // One set per line: name<TAB>gene<TAB>gene...
        for (const auto& line : read_lines(*gene_sets_path)) {
            const auto f = split(line, '\t');
            if (f.size() >= 2) sets[f[0]].assign(f.begin() + 1, f.end());
        }
    }
    std::string de_csv = "cluster,gene,stat,p,q,direction\n", ora_csv = "cluster,gene_set,hits,set_size,draw,universe,p,q\n";
    const auto& genes = slide.panel.genes;
    for (int c : distinct) {
        std::vector<std::size_t> in, rest;
        for (std::size_t i = 0; i < pred.size(); ++i) (pred[i] == c ? in : rest).push_back(i);
        const auto rows = dom::wilcoxon_de(select_rows(norm, in), select_rows(norm, rest), genes);
        std::set<std::string> up;
        for (const auto& r : rows) {
            de_csv += std::to_string(c) + "," + r.gene + "," + format_double(r.stat) + "," + format_double(r.p) + "," +
                      format_double(r.q) + "," + std::to_string(r.direction) + "\n";
            if (r.q < de_q && r.direction > 0) up.insert(r.gene);
        }
        std::vector<double> ps;
        std::vector<std::string> lines_c;
        for (const auto& [name, members] : sets) {
            const std::set<std::string> in_panel(members.begin(), members.end());
            long set_size = 0, hits = 0;
            for (const auto& g : genes)
                if (in_panel.count(g)) {
                    ++set_size;
                    hits += up.count(g) ? 1 : 0;
                }
            const double p = dom::ora_hypergeom(hits, set_size, static_cast<long>(up.size()), static_cast<long>(genes.size()));
            ps.push_back(p);
            lines_c.push_back(std::to_string(c) + "," + name + "," + std::to_string(hits) + "," + std::to_string(set_size) + "," +
                              std::to_string(up.size()) + "," + std::to_string(genes.size()) + "," + format_double(p));
        }
        const auto q = dom::bh_adjust(ps);
        for (std::size_t i = 0; i < lines_c.size(); ++i) ora_csv += lines_c[i] + "," + format_double(q[i]) + "\n";
    }
    write_file_atomic(ctx.out / "de.csv", de_csv);
    if (gene_sets_path) write_file_atomic(ctx.out / "ora.csv", ora_csv);
}

void run_survival(Context& ctx) {
    Block& b = ctx.config.block;
    const bool synthesize = b.has("cohort");
    clin::CohortSynthConfig cs;
    std::optional<fs::path> cohort_csv, bags_dir;
    if (synthesize) {
        Block& c = b.child("cohort");
        cs.n_subjects = c.get<std::size_t>("n_subjects", cs.n_subjects);
        cs.patches = c.get<std::size_t>("patches", cs.patches);
        cs.he_dim = c.get<std::size_t>("he_dim", cs.he_dim);
        cs.st_dim = c.get<std::size_t>("st_dim", cs.st_dim);
        cs.log_hazard = c.get<double>("log_hazard", cs.log_hazard);
        cs.base_hazard = c.get<double>("base_hazard", cs.base_hazard);
        cs.censor_fraction = c.get<double>("censor_fraction", cs.censor_fraction);
        cs.signal_fraction = c.get<double>("signal_fraction", cs.signal_fraction);
        cs.signal = c.get<double>("signal", cs.signal);
        cs.seed = derive_seed(ctx.config.seed, "cli/cohort");
    } else {
        cohort_csv = ctx.resolve(b, "cohort_csv");
        bags_dir = ctx.resolve(b, "bags_dir");
    }
    Block& mb = b.child("model");
    clin::RiskConfig rc;
    rc.mode = clin::bag_mode_from_string(mb.get<std::string>("mode", "multimodal"));
    rc.dim = mb.get<std::size_t>("dim", 16);
    rc.n_queries = mb.get<std::size_t>("n_queries", 64);
    rc.ffn_hidden = mb.get<std::size_t>("ffn_hidden", 32);
    rc.pool_hidden = mb.get<std::size_t>("pool_hidden", 16);
    rc.mlp_hidden = mb.get<std::size_t>("mlp_hidden", 16);
    Block& tb = b.child("train");
    clin::RiskTrainConfig tc;
    tc.lr = tb.get<double>("lr", 3e-3);
    tc.weight_decay = tb.get<double>("weight_decay", tc.weight_decay);
    tc.epochs = tb.get<std::size_t>("epochs", tc.epochs);
    tc.batch_size = tb.get<std::size_t>("batch_size", tc.batch_size);
    tc.validate();
    Block& sb = b.child("split");
    const double val_frac = sb.get<double>("validation_fraction", 0.2);
    const double test_frac = sb.get<double>("test_fraction", 0.3);
    if (val_frac <= 0.0 || test_frac <= 0.0 || val_frac + test_frac >= 1.0)
        sb.fail("validation_fraction", "validation and test fractions must be positive and sum to < 1");
    Block& bb = b.child("bootstrap");
    const auto resamples = bb.get<std::size_t>("resamples", 1000);
    const double level = bb.get<double>("level", 0.95);
    const auto cox_covariates = b.maybe<std::vector<std::string>>("cox_covariates");
    ctx.begin();

    clin::Cohort cohort;
    std::vector<clin::SlideBag> bags;
    if (synthesize) {
        auto sc = clin::synth_cohort(cs);
        cohort = std::move(sc.cohort);
        bags = std::move(sc.bags);
        clin::write_cohort_csv(ctx.out / "cohort.csv", cohort);
        for (const auto& bag : bags) write_bag(ctx.out / "bags", bag);
    } else {
        cohort = clin::read_cohort_csv(*cohort_csv);
        for (const auto& r : cohort.records) bags.push_back(read_bag(*bags_dir, r.slide_id));
    }
    const std::size_t n = cohort.records.size();
    const auto first = std::find_if(bags.begin(), bags.end(), [](const clin::SlideBag& x) { return x.he || x.st; });
    rc.he_dim = first->he ? first->he->cols() : 0;
    rc.st_dim = first->st ? first->st->cols() : 0;
    rc.validate();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(ctx.config.seed, "cli/survival_split");
    histost::shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n)));
    const auto n_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(n)));
    if (n_val < 2 || n_test < 2 || n_val + n_test + 2 > n) throw DomainError("survival: cohort too small for the requested split");
    std::map<std::string, std::vector<std::size_t>> split;
    split["validation"].assign(order.begin(), order.begin() + static_cast<long>(n_val));
    split["test"].assign(order.begin() + static_cast<long>(n_val), order.begin() + static_cast<long>(n_val + n_test));
    split["train"].assign(order.begin() + static_cast<long>(n_val + n_test), order.end());
    for (auto& [k, v] : split) std::sort(v.begin(), v.end());

    const auto pick_bags = [&](const std::vector<std::size_t>& idx) {
        std::vector<clin::SlideBag> out;
        for (auto i : idx) out.push_back(bags[i]);
        return out;
    };
    const auto pick_records = [&](const std::vector<std::size_t>& idx) {
        std::vector<clin::SurvivalRecord> out;
        for (auto i : idx) out.push_back(cohort.records[i]);
        return out;
    };

    clin::RiskModel model(rc, derive_seed(ctx.config.seed, "cli/risk_init"));
    const auto tr = clin::train_risk(model, pick_bags(split["train"]), pick_records(split["train"]), tc,
                                     derive_seed(ctx.config.seed, "cli/risk_train"));
    const auto scores = clin::risk_scores(model, bags);
    for (std::size_t i = 0; i < n; ++i) cohort.records[i].score = scores[i];

    std::string loss = "epoch,loss\n";
    for (std::size_t i = 0; i < tr.epoch_loss.size(); ++i) loss += std::to_string(i) + "," + format_double(tr.epoch_loss[i]) + "\n";
    write_file_atomic(ctx.out / "loss.csv", loss);
    for (const auto& [name, idx] : split) clin::write_risk_csv(ctx.out / ("risk_" + name + ".csv"), pick_records(idx));

    std::string cidx = "split,n,c_index,mean,sd,lo,hi,resamples,redraws\n";
    for (const auto& [name, idx] : split) {
        const auto recs = pick_records(idx);
        const auto t = times_of(recs);
        const auto e = events_of(recs);
        std::vector<double> s;
        for (const auto& r : recs) s.push_back(r.score);
        const clin::ResampleMetric metric = [&](std::span<const std::size_t> sel) -> std::optional<double> {
            std::vector<double> ss, tt;
            std::vector<int> ee;
            for (auto i : sel) {
                ss.push_back(s[i]);
                tt.push_back(t[i]);
                ee.push_back(e[i]);
            }
            try {
                return clin::c_index(ss, tt, ee);
            } catch (const DomainError&) {
                return std::nullopt;
            }
        };
        const auto bs = clin::bootstrap_ci(metric, recs.size(), resamples, derive_seed(ctx.config.seed, "cli/bootstrap/" + name), level);
        cidx += name + "," + std::to_string(recs.size()) + "," + format_double(bs.estimate) + "," + format_double(bs.mean) + "," +
                format_double(bs.sd) + "," + format_double(bs.lo) + "," + format_double(bs.hi) + "," +
                std::to_string(bs.resamples) + "," + std::to_string(bs.redraws) + "\n";
    }
    write_file_atomic(ctx.out / "c_index.csv", cidx);

    std::vector<double> val_scores;
    for (auto i : split["validation"]) val_scores.push_back(scores[i]);
    const auto strat = clin::stratify_median(val_scores, pick_records(split["test"]));
    std::vector<std::pair<std::string, std::vector<clin::KmPoint>>> curves;
    if (!strat.km_high.empty()) curves.emplace_back("high", strat.km_high);
    if (!strat.km_low.empty()) curves.emplace_back("low", strat.km_low);
    clin::write_km_csv(ctx.out / "km.csv", curves);
    std::string lr = "cutoff,n_high,n_low,statistic,p,note\n";
    lr += format_double(strat.cutoff) + "," + std::to_string(strat.high.size()) + "," + std::to_string(strat.low.size()) + "," +
          (strat.test ? format_double(strat.test->statistic) + "," + format_double(strat.test->p) : std::string("NA,NA")) + "," +
          strat.note + "\n";
    write_file_atomic(ctx.out / "logrank.csv", lr);

    std::vector<std::string> terms{"risk"};
    std::vector<std::size_t> cov_cols;
    const auto& names = cohort.covariate_names;
    for (const auto& c : cox_covariates.value_or(names)) {
        const auto it = std::find(names.begin(), names.end(), c);
        if (it == names.end())
            throw InputError(ctx.config.file.string() + ": survival.cox_covariates: '" + c + "' is not a cohort column");
        cov_cols.push_back(static_cast<std::size_t>(it - names.begin()));
        terms.push_back(c);
    }
    const auto test = pick_records(split["test"]);
    Tensor x(Tensor::Shape{test.size(), terms.size()});
    for (std::size_t i = 0; i < test.size(); ++i) {
        x.at(i, 0) = test[i].score;
        for (std::size_t j = 0; j < cov_cols.size(); ++j) x.at(i, j + 1) = test[i].covariates[cov_cols[j]];
    }
    clin::write_cox_csv(ctx.out / "cox.csv", terms, clin::cox_fit(x, times_of(test), events_of(test)));

    core::save_checkpoint(ctx.out / "risk_model.bin", core::collect_params(model.params()));
    write_file_atomic(ctx.out / "risk_config.json", dump(risk_config_to_json(rc)));
}

void run_attribute(Context& ctx) {
    Block& b = ctx.config.block;
    const fs::path model_path = ctx.resolve(b, "risk_model");
    const fs::path config_path = ctx.resolve(b, "risk_config");
    const fs::path cohort_path = ctx.resolve(b, "cohort_csv");
    const fs::path bags_dir = ctx.resolve(b, "bags_dir");
    const auto only = b.maybe<std::vector<std::string>>("slides");
    const auto steps = b.get<std::size_t>("steps", 128);
    if (steps < 1) b.fail("steps", "must be >= 1");
    ctx.begin();

    clin::RiskModel model(risk_config_from_json(config_path), 0);
    core::apply_checkpoint(model.params(), core::load_checkpoint(model_path));
    const auto cohort = clin::read_cohort_csv(cohort_path);
    std::vector<std::string> ids;
    for (const auto& r : cohort.records) ids.push_back(r.slide_id);
    if (only) {
        for (const auto& s : *only)
            if (std::find(ids.begin(), ids.end(), s) == ids.end())
                throw InputError(ctx.config.file.string() + ": attribute.slides: '" + s + "' is not in " + cohort_path.string());
        ids = *only;
    }
    std::string summary = "slide_id,risk,baseline,residual,relative_residual\n";
    for (const auto& id : ids) {
        const auto bag = read_bag(bags_dir, id);
        const auto a = clin::attribute_bag(model, bag, steps);
        clin::write_attribution_csv(ctx.out / "attributions" / (id + ".csv"), a, bag);
        summary += id + "," + format_double(a.f_x) + "," + format_double(a.f_baseline) + "," + format_double(a.residual) + "," +
                   format_double(a.relative_residual) + "\n";
    }
    write_file_atomic(ctx.out / "summary.csv", summary);
}

}  // namespace histost::cli
