// SPDX-License-Identifier: Apache-2.0
#include "histost/vst/virtual_st.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "histost/common/errors.hpp"
#include "histost/common/fs.hpp"
#include "histost/common/rng.hpp"
#include "histost/numerics/optim.hpp"

namespace histost::vst {

using ad::Tensor;
using ad::Var;

const char* to_string(HeadKind k) { return k == HeadKind::Mlp ? "mlp" : "linear"; }

HeadKind head_kind_from_string(const std::string& s) {
    if (s == "mlp") return HeadKind::Mlp;
    if (s == "linear") return HeadKind::Linear;
    throw ContractViolation("unknown head kind '" + s + "' (expected mlp or linear)");
}

void FinetuneConfig::validate() const {
    HISTOST_REQUIRE(lambda1 >= 0.0 && lambda2 >= 0.0, "finetune: lambda1 and lambda2 must be >= 0");
    HISTOST_REQUIRE(lambda1 > 0.0 || lambda2 > 0.0, "finetune: lambda1 and lambda2 must not both be 0");
    HISTOST_REQUIRE(lr > 0.0 && std::isfinite(lr), "finetune: lr must be positive");
    HISTOST_REQUIRE(epochs >= 1, "finetune: epochs must be >= 1");
    HISTOST_REQUIRE(batch_size >= 1, "finetune: batch_size must be >= 1");
    HISTOST_REQUIRE(weight_decay >= 0.0, "finetune: weight_decay must be >= 0");
    HISTOST_REQUIRE(kind == HeadKind::Linear || hidden >= 1, "finetune: hidden must be >= 1");
}

PredictionHead make_head(HeadKind kind, std::size_t input_dim, std::size_t hidden, std::vector<std::string> genes,
                         std::uint64_t seed) {
    HISTOST_REQUIRE(input_dim >= 1 && !genes.empty(), "make_head: need input_dim >= 1 and at least one gene");
    PredictionHead h;
    h.kind = kind;
    h.input_dim = input_dim;
    h.genes = std::move(genes);
    const std::size_t g = h.genes.size();
    Rng rng = make_rng(seed, "head/init");
    if (kind == HeadKind::Mlp) {
        HISTOST_REQUIRE(hidden >= 1, "make_head: hidden must be >= 1");
        h.params.add("head.w1", ad::xavier_uniform(input_dim, hidden, rng));
        h.params.add("head.b1", Tensor(Tensor::Shape{hidden}));
        h.params.add("head.w2", ad::xavier_uniform(hidden, g, rng));
        h.params.add("head.b2", Tensor(Tensor::Shape{g}));
    } else {
        h.params.add("head.w", ad::xavier_uniform(input_dim, g, rng));
        h.params.add("head.b", Tensor(Tensor::Shape{g}));
    }
    return h;
}

Var head_forward(ad::Tape& tape, PredictionHead& head, Var x) {
    HISTOST_REQUIRE(x.value().ndim() == 2 && x.cols() == head.input_dim,
                    "head_forward: embedding width " + std::to_string(x.value().ndim() == 2 ? x.cols() : 0) +
                        " does not match head input " + std::to_string(head.input_dim));
    auto& s = head.params;
    if (head.kind == HeadKind::Linear) return ad::add_rowvec(ad::matmul(x, tape.param(s.get("head.w"))), tape.param(s.get("head.b")));
    Var h = ad::gelu(ad::add_rowvec(ad::matmul(x, tape.param(s.get("head.w1"))), tape.param(s.get("head.b1"))));
    return ad::add_rowvec(ad::matmul(h, tape.param(s.get("head.w2"))), tape.param(s.get("head.b2")));
}

Tensor head_predict(PredictionHead& head, const Tensor& x) {
    ad::Tape tape;
    return head_forward(tape, head, tape.constant(x)).value();
}

Var loss_l1l2(Var pred, const Tensor& target, const FinetuneConfig& config) {
    HISTOST_REQUIRE(pred.value().same_shape(target), "loss_l1l2: prediction " + pred.value().shape_string() +
                                                         " and target " + target.shape_string() + " differ in shape");
    const double n = static_cast<double>(target.size());
    Var r = ad::add_const(pred, [&] {
        Tensor neg = target;
        for (auto& v : neg.storage()) v = -v;
        return neg;
    }());
    Var total;
    if (config.lambda1 > 0.0) total = ad::scale(ad::sum(ad::abs(r)), config.lambda1 / n);
    if (config.lambda2 > 0.0) {
        Var l2 = ad::scale(ad::sum(ad::square(r)), config.lambda2 / n);
        total = total.tape ? ad::add(total, l2) : l2;
    }
    return total;
}

double loss_l1l2(const Tensor& pred, const Tensor& target, const FinetuneConfig& config) {
    HISTOST_REQUIRE(pred.same_shape(target), "loss_l1l2: prediction " + pred.shape_string() + " and target " +
                                                 target.shape_string() + " differ in shape");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = target.data()[i] - pred.data()[i];
        s += config.lambda1 * std::abs(r) + config.lambda2 * r * r;
    }
    return s / static_cast<double>(pred.size());
}

HeadData head_data(core::SpatialModel& model, const core::Corpus& corpus, const std::vector<std::size_t>& slides,
                   const std::vector<std::size_t>& genes, std::size_t batch_size) {
    HISTOST_REQUIRE(!genes.empty(), "head_data: no target genes");
    for (std::size_t g : genes) HISTOST_REQUIRE(g < corpus.n_genes(), "head_data: gene column out of range");
    std::vector<std::vector<double>> xs, ys;
    HeadData out;
    for (std::size_t s : slides) {
        HISTOST_REQUIRE(s < corpus.slides.size(), "head_data: slide index out of range");
        const auto& ps = corpus.slides[s];
        for (std::size_t g : genes)
            HISTOST_REQUIRE(ps.gene_mask[g] != 0.0, "head_data: target gene '" + corpus.panels.panel.genes[g] +
                                                        "' is not measured on slide '" + ps.slide_id + "'");
        const Tensor emb = core::encode_slide_he_only(model, corpus, s, batch_size);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            if (!ps.has_st[i]) continue;
            const auto r = emb.row(i);
            xs.emplace_back(r.begin(), r.end());
            std::vector<double> y(genes.size());
            for (std::size_t j = 0; j < genes.size(); ++j) y[j] = ps.expression.at(i, genes[j]);
            ys.push_back(std::move(y));
            out.spot_ids.push_back(ps.spot_ids[i]);
        }
    }
    if (xs.empty()) return out;
    const std::size_t d = xs[0].size();
    out.x = Tensor(Tensor::Shape{xs.size(), d});
    out.y = Tensor(Tensor::Shape{ys.size(), genes.size()});
    for (std::size_t i = 0; i < xs.size(); ++i) {
        std::copy(xs[i].begin(), xs[i].end(), out.x.row(i).begin());
        std::copy(ys[i].begin(), ys[i].end(), out.y.row(i).begin());
    }
    return out;
}

namespace {

Tensor gather(const Tensor& m, const std::vector<std::size_t>& rows) {
    Tensor out(Tensor::Shape{rows.size(), m.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(m.row(rows[i]).begin(), m.cols(), out.row(i).begin());
    return out;
}

}  // namespace

FinetuneResult finetune_head(const HeadData& data, const std::vector<std::string>& genes, const FinetuneConfig& config,
                             std::uint64_t seed) {
    config.validate();
    if (data.spot_ids.empty()) throw DomainError("finetune_head: the training split has no spots with expression");
    HISTOST_REQUIRE(data.y.cols() == genes.size(), "finetune_head: target width does not match the gene list");
    FinetuneResult res{make_head(config.kind, data.x.cols(), config.hidden, genes, seed), 0.0, {}};
    PredictionHead& head = res.head;
    res.initial_loss = loss_l1l2(head_predict(head, data.x), data.y, config);

    ad::OptimizerConfig oc;
    oc.base_lr = config.lr;
    oc.weight_decay = config.weight_decay;
    oc.warmup_epochs = 0.0;
    oc.total_epochs = static_cast<double>(config.epochs);
    oc.batch_size = static_cast<int>(config.batch_size);
    ad::OptimizerState state;
    auto params = head.params.all();

    const std::size_t n = data.spot_ids.size();
    const std::size_t per_epoch = (n + config.batch_size - 1) / config.batch_size;
    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng = make_rng(seed, "finetune/shuffle", epoch);
        histost::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        for (std::size_t b = 0; b < per_epoch; ++b) {
            const std::size_t lo = b * config.batch_size, hi = std::min(n, lo + config.batch_size);
            const std::vector<std::size_t> rows(order.begin() + static_cast<long>(lo), order.begin() + static_cast<long>(hi));
            ad::Tape tape;
            Var loss = loss_l1l2(head_forward(tape, head, tape.constant(gather(data.x, rows))), gather(data.y, rows), config);
            const auto grads = tape.backward(loss);
            sum += loss.value().item();
            const double t = static_cast<double>(epoch) + static_cast<double>(b + 1) / static_cast<double>(per_epoch);
            // The schedule reaches zero at the final step; evaluate it at the
            // start of the step instead so the last update still moves.
            const double t0 = t - 1.0 / static_cast<double>(per_epoch);
            ad::adamw_step(params, grads, state, oc, ad::lr_at(oc, t0));
        }
        res.epoch_loss.push_back(sum / static_cast<double>(per_epoch));
    }
    return res;
}

void write_predictions_csv(const fs::path& path, const PredictionMatrix& m) {
    HISTOST_REQUIRE(m.values.rows() == m.spot_ids.size() && m.values.cols() == m.genes.size(),
                    "write_predictions_csv: matrix shape does not match ids and genes");
    std::string out = "spot_id";
    for (const auto& g : m.genes) out += "," + g;
    out += "\n";
    for (std::size_t i = 0; i < m.spot_ids.size(); ++i) {
        out += m.spot_ids[i];
        for (std::size_t j = 0; j < m.genes.size(); ++j) out += "," + format_double(m.values.at(i, j));
        out += "\n";
    }
    write_file_atomic(path, out);
}

std::vector<GeneScore> pcc_genewise(const Tensor& pred, const Tensor& truth, const std::vector<std::string>& genes) {
    HISTOST_REQUIRE(pred.same_shape(truth) && pred.ndim() == 2, "pcc_genewise: prediction and truth differ in shape");
    HISTOST_REQUIRE(pred.cols() == genes.size(), "pcc_genewise: gene list does not match the matrix width");
    const std::size_t n = pred.rows();
    HISTOST_REQUIRE(n >= 3, "pcc_genewise: need at least 3 spots, got " + std::to_string(n));
    std::vector<GeneScore> out(genes.size());
    for (std::size_t g = 0; g < genes.size(); ++g) {
        double mp = 0.0, mt = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mp += pred.at(i, g);
            mt += truth.at(i, g);
        }
        mp /= static_cast<double>(n);
        mt /= static_cast<double>(n);
        double sxy = 0.0, sxx = 0.0, syy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double a = pred.at(i, g) - mp, b = truth.at(i, g) - mt;
            sxy += a * b;
            sxx += a * a;
            syy += b * b;
        }
        out[g].gene = genes[g];
        out[g].n_spots = n;
        if (sxx > 0.0 && syy > 0.0) out[g].pcc = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    }
    return out;
}

void write_scores_csv(const fs::path& path, const std::vector<GeneScore>& scores) {
    std::string out = "gene,pcc,n_spots\n";
    for (const auto& s : scores)
        out += s.gene + "," + (s.pcc ? format_double(*s.pcc) : std::string("NA")) + "," + std::to_string(s.n_spots) + "\n";
    write_file_atomic(path, out);
}

double median(std::vector<double> v) {
    HISTOST_REQUIRE(!v.empty(), "median: empty input");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

std::vector<BenchmarkRow> benchmark_report(const std::vector<GeneScore>& scores, const std::vector<std::size_t>& top_k) {
    HISTOST_REQUIRE(!scores.empty(), "benchmark_report: no scores");
    std::vector<double> defined;
    for (const auto& s : scores)
        if (s.pcc) defined.push_back(*s.pcc);
    std::sort(defined.begin(), defined.end(), std::greater<>());
    std::vector<BenchmarkRow> rows;
    for (std::size_t k : top_k) {
        HISTOST_REQUIRE(k >= 1, "benchmark_report: k must be >= 1");
        BenchmarkRow r{k, std::nullopt};
        if (k <= defined.size()) r.median_pcc = median({defined.begin(), defined.begin() + static_cast<long>(k)});
        rows.push_back(r);
    }
    return rows;
}

std::size_t undefined_count(const std::vector<GeneScore>& scores) {
    return static_cast<std::size_t>(std::count_if(scores.begin(), scores.end(), [](const GeneScore& s) { return !s.pcc; }));
}

void write_benchmark_csv(const fs::path& path, const std::vector<BenchmarkRow>& rows) {
    std::string out = "k,median_pcc\n";
    for (const auto& r : rows) out += std::to_string(r.k) + "," + (r.median_pcc ? format_double(*r.median_pcc) : "NA") + "\n";
    write_file_atomic(path, out);
}

SlideSplit split_slides(std::size_t n_slides, double test_fraction, std::uint64_t seed) {
    HISTOST_REQUIRE(n_slides >= 1, "split_slides: no slides");
    HISTOST_REQUIRE(test_fraction >= 0.0 && test_fraction < 1.0, "split_slides: test_fraction must lie in [0, 1)");
    std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n_slides)));
    if (n_slides >= 2 && test_fraction > 0.0) n_test = std::max<std::size_t>(n_test, 1);
    n_test = std::min(n_test, n_slides - 1);
    std::vector<std::size_t> order(n_slides);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(seed, "split/slides");
    histost::shuffle(order.begin(), order.end(), rng);
    SlideSplit s;
    s.test.assign(order.begin(), order.begin() + static_cast<long>(n_test));
    s.train.assign(order.begin() + static_cast<long>(n_test), order.end());
    std::sort(s.test.begin(), s.test.end());
    std::sort(s.train.begin(), s.train.end());
    return s;
}

SlideSplit split_by_x(const std::vector<std::array<double, 2>>& coords, double train_fraction) {
    HISTOST_REQUIRE(!coords.empty(), "split_by_x: no spots");
    HISTOST_REQUIRE(train_fraction > 0.0 && train_fraction < 1.0, "split_by_x: train_fraction must lie in (0, 1)");
    std::vector<std::size_t> order(coords.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return coords[a][0] < coords[b][0]; });
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(coords.size())));
    SlideSplit s;
    s.train.assign(order.begin(), order.begin() + static_cast<long>(n_train));
    s.test.assign(order.begin() + static_cast<long>(n_train), order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

}  // namespace histost::vst
