// SPDX-License-Identifier: Apache-2.0
#include "histost/clinical/risk.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "histost/common/errors.hpp"
#include "histost/common/fs.hpp"
#include "histost/common/rng.hpp"
#include "histost/numerics/optim.hpp"

namespace histost::clin {

using ad::Tensor;
using ad::Var;

const char* to_string(BagMode m) {
    switch (m) {
        case BagMode::Multimodal: return "multimodal";
        case BagMode::HeOnly: return "he_only";
        case BagMode::StOnly: return "st_only";
    }
    return "?";
}

BagMode bag_mode_from_string(const std::string& s) {
    if (s == "multimodal") return BagMode::Multimodal;
    if (s == "he_only") return BagMode::HeOnly;
    if (s == "st_only") return BagMode::StOnly;
    throw ContractViolation("unknown bag mode '" + s + "' (expected multimodal, he_only or st_only)");
}

namespace {

bool uses_he(BagMode m) { return m != BagMode::StOnly; }
bool uses_st(BagMode m) { return m != BagMode::HeOnly; }

}  // namespace

void RiskConfig::validate() const {
    HISTOST_REQUIRE(dim >= 1 && n_queries >= 1 && ffn_hidden >= 1 && pool_hidden >= 1 && mlp_hidden >= 1,
                    "risk config: dim, n_queries and hidden widths must be >= 1");
    HISTOST_REQUIRE(!uses_he(mode) || he_dim >= 1, "risk config: he_dim must be >= 1 when H&E tokens are used");
    HISTOST_REQUIRE(!uses_st(mode) || st_dim >= 1, "risk config: st_dim must be >= 1 when ST tokens are used");
}

RiskModel::RiskModel(RiskConfig config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const std::size_t d = config_.dim;
    Rng rng = make_rng(seed, "risk/init");
    const auto zeros = [](std::size_t n) { return Tensor(Tensor::Shape{n}); };
    for (const std::string m : {"he", "st"}) {
        if (m == "he" ? !uses_he(config_.mode) : !uses_st(config_.mode)) continue;
        const std::size_t in = m == "he" ? config_.he_dim : config_.st_dim;
        const std::string p = "risk." + m + ".";
        params_.add(p + "q", ad::xavier_uniform(config_.n_queries, d, rng));
        params_.add(p + "wq", ad::xavier_uniform(d, d, rng));
        params_.add(p + "wk", ad::xavier_uniform(in, d, rng));
        params_.add(p + "wv", ad::xavier_uniform(in, d, rng));
        params_.add(p + "bv", zeros(d));
        params_.add(p + "ffn.w1", ad::xavier_uniform(d, config_.ffn_hidden, rng));
        params_.add(p + "ffn.b1", zeros(config_.ffn_hidden));
        params_.add(p + "ffn.w2", ad::xavier_uniform(config_.ffn_hidden, d, rng));
        params_.add(p + "ffn.b2", zeros(d));
    }
    if (config_.mode == BagMode::Multimodal) {
        for (const std::string m : {"he", "st"}) {
            const std::string p = "risk.fuse." + m + ".";
            params_.add(p + "wq", ad::xavier_uniform(d, d, rng));
            params_.add(p + "wk", ad::xavier_uniform(d, d, rng));
            params_.add(p + "wv", ad::xavier_uniform(d, d, rng));
            params_.add(p + "bv", zeros(d));
        }
    }
    std::size_t pooled = 0;
    for (const std::string m : {"he", "st"}) {
        if (m == "he" ? !uses_he(config_.mode) : !uses_st(config_.mode)) continue;
        const std::string p = "risk.pool." + m + ".";
        params_.add(p + "v", ad::xavier_uniform(d, config_.pool_hidden, rng));
        params_.add(p + "c", zeros(config_.pool_hidden));
        params_.add(p + "w", ad::xavier_uniform(config_.pool_hidden, 1, rng));
        pooled += d;
    }
    params_.add("risk.mlp.w1", ad::xavier_uniform(pooled, config_.mlp_hidden, rng));
    params_.add("risk.mlp.b1", zeros(config_.mlp_hidden));
    params_.add("risk.mlp.w2", ad::xavier_uniform(config_.mlp_hidden, 1, rng));
    params_.add("risk.mlp.b2", zeros(1));
}

namespace {

Var bind_param(ad::Tape& t, RiskModel& m, const std::string& name) { return t.param(m.params().get(name)); }

/// q + softmax(q Wq (kv Wk)^T / sqrt(D)) (kv Wv + bv)
AttentionOut attend(ad::Tape& t, RiskModel& m, const std::string& p, Var q, Var kv) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(m.config().dim));
    Var qs = ad::matmul(q, bind_param(t, m, p + "wq"));
    Var ks = ad::matmul(kv, bind_param(t, m, p + "wk"));
    Var vs = ad::add_rowvec(ad::matmul(kv, bind_param(t, m, p + "wv")), bind_param(t, m, p + "bv"));
    Var w = ad::softmax_rows(ad::scale(ad::matmul_nt(qs, ks), inv));
    return {ad::add(q, ad::matmul(w, vs)), w};
}

void require_tokens(Var x, std::size_t width, const std::string& who) {
    HISTOST_REQUIRE(x.value().ndim() == 2 && x.rows() >= 1, who + ": need at least one token");
    HISTOST_REQUIRE(x.cols() == width, who + ": token width " + std::to_string(x.cols()) + " does not match " +
                                           std::to_string(width));
}

}  // namespace

AttentionOut perceiver_compress(ad::Tape& tape, RiskModel& model, const std::string& modality, Var tokens) {
    HISTOST_REQUIRE(modality == "he" || modality == "st", "perceiver_compress: modality must be he or st");
    const std::string p = "risk." + modality + ".";
    HISTOST_REQUIRE(model.params().contains(p + "q"), "perceiver_compress: model has no " + modality + " compressor");
    require_tokens(tokens, modality == "he" ? model.config().he_dim : model.config().st_dim, "perceiver_compress");
    AttentionOut a = attend(tape, model, p, bind_param(tape, model, p + "q"), tokens);
    Var h = ad::gelu(ad::add_rowvec(ad::matmul(a.out, bind_param(tape, model, p + "ffn.w1")), bind_param(tape, model, p + "ffn.b1")));
    Var f = ad::add_rowvec(ad::matmul(h, bind_param(tape, model, p + "ffn.w2")), bind_param(tape, model, p + "ffn.b2"));
    return {ad::add(a.out, f), a.weights};
}

FuseOut cross_fuse(ad::Tape& tape, RiskModel& model, Var a, Var b) {
    HISTOST_REQUIRE(model.config().mode == BagMode::Multimodal, "cross_fuse: unimodal models bypass fusion");
    require_tokens(a, model.config().dim, "cross_fuse");
    require_tokens(b, model.config().dim, "cross_fuse");
    const AttentionOut ab = attend(tape, model, "risk.fuse.he.", a, b);
    const AttentionOut ba = attend(tape, model, "risk.fuse.st.", b, a);
    return {ab.out, ba.out, ab.weights, ba.weights};
}

PoolOut abmil_pool(ad::Tape& tape, RiskModel& model, const std::string& modality, Var tokens) {
    const std::string p = "risk.pool." + modality + ".";
    HISTOST_REQUIRE(model.params().contains(p + "v"), "abmil_pool: model has no " + modality + " pooling head");
    require_tokens(tokens, model.config().dim, "abmil_pool");
    Var h = ad::tanh(ad::add_rowvec(ad::matmul(tokens, bind_param(tape, model, p + "v")), bind_param(tape, model, p + "c")));
    Var w = ad::softmax_rows(ad::transpose(ad::matmul(h, bind_param(tape, model, p + "w"))));
    return {ad::matmul(w, tokens), w};
}

BagVars bind_bag(ad::Tape& tape, const RiskModel& model, const SlideBag& bag) {
    const BagMode mode = model.config().mode;
    BagVars v;
    if (uses_he(mode)) {
        HISTOST_REQUIRE(bag.he.has_value(), "bag '" + bag.slide_id + "': H&E tokens required by a " + to_string(mode) + " model");
        v.he = tape.constant(*bag.he);
    }
    if (uses_st(mode)) {
        HISTOST_REQUIRE(bag.st.has_value(), "bag '" + bag.slide_id + "': ST tokens required by a " + to_string(mode) + " model");
        v.st = tape.constant(*bag.st);
    }
    return v;
}

Var risk_forward(ad::Tape& tape, RiskModel& model, const BagVars& bag) {
    const BagMode mode = model.config().mode;
    HISTOST_REQUIRE(uses_he(mode) == bag.he.has_value() && uses_st(mode) == bag.st.has_value(),
                    std::string("risk_forward: bag modalities do not match a ") + to_string(mode) + " model");
    std::optional<Var> he, st;
    if (bag.he) he = perceiver_compress(tape, model, "he", *bag.he).out;
    if (bag.st) st = perceiver_compress(tape, model, "st", *bag.st).out;
    if (he && st) {
        const FuseOut f = cross_fuse(tape, model, *he, *st);
        he = f.a;
        st = f.b;
    }
    std::vector<Var> pooled;
    if (he) pooled.push_back(abmil_pool(tape, model, "he", *he).pooled);
    if (st) pooled.push_back(abmil_pool(tape, model, "st", *st).pooled);
    Var z = pooled.size() == 1 ? pooled[0] : ad::concat_cols(pooled);
    Var h = ad::gelu(ad::add_rowvec(ad::matmul(z, bind_param(tape, model, "risk.mlp.w1")), bind_param(tape, model, "risk.mlp.b1")));
    return ad::add_rowvec(ad::matmul(h, bind_param(tape, model, "risk.mlp.w2")), bind_param(tape, model, "risk.mlp.b2"));
}

double risk_score(RiskModel& model, const SlideBag& bag) {
    ad::Tape tape;
    return risk_forward(tape, model, bind_bag(tape, model, bag)).value().item();
}

std::vector<double> risk_scores(RiskModel& model, const std::vector<SlideBag>& bags) {
    std::vector<double> out;
    out.reserve(bags.size());
    for (const auto& b : bags) out.push_back(risk_score(model, b));
    return out;
}

void RiskTrainConfig::validate() const {
    HISTOST_REQUIRE(lr > 0.0 && std::isfinite(lr), "risk training: lr must be positive");
    HISTOST_REQUIRE(weight_decay >= 0.0, "risk training: weight_decay must be >= 0");
    HISTOST_REQUIRE(epochs >= 1, "risk training: epochs must be >= 1");
    HISTOST_REQUIRE(batch_size != 1, "risk training: batch_size must be 0 (whole cohort) or >= 2");
}

RiskTrainResult train_risk(RiskModel& model, const std::vector<SlideBag>& bags, const std::vector<SurvivalRecord>& records,
                           const RiskTrainConfig& config, std::uint64_t seed) {
    config.validate();
    HISTOST_REQUIRE(bags.size() == records.size() && !bags.empty(), "train_risk: need one record per bag");
    const std::size_t n = bags.size();
    if (std::none_of(records.begin(), records.end(), [](const SurvivalRecord& r) { return r.event == 1; }))
        throw DomainError("train_risk: the training cohort has no events");
    const std::size_t bs = config.batch_size == 0 ? n : std::min(config.batch_size, n);
    const std::size_t per_epoch = (n + bs - 1) / bs;

    ad::OptimizerConfig oc;
    oc.base_lr = config.lr;
    oc.weight_decay = config.weight_decay;
    oc.warmup_epochs = 0.0;
    oc.total_epochs = static_cast<double>(config.epochs);
    oc.batch_size = static_cast<int>(bs);
    ad::OptimizerState state;
    auto params = model.params().all();

    RiskTrainResult res;
    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng = make_rng(seed, "risk/shuffle", epoch);
        histost::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        std::size_t used = 0;
        for (std::size_t b = 0; b < per_epoch; ++b) {
            const std::size_t lo = b * bs, hi = std::min(n, lo + bs);
            std::vector<double> t;
            std::vector<int> e;
            for (std::size_t k = lo; k < hi; ++k) {
                t.push_back(records[order[k]].time);
                e.push_back(records[order[k]].event);
            }
            if (std::count(e.begin(), e.end(), 1) == 0) continue;
            ad::Tape tape;
            std::vector<Var> scores;
            for (std::size_t k = lo; k < hi; ++k) scores.push_back(risk_forward(tape, model, bind_bag(tape, model, bags[order[k]])));
            Var loss = cox_nll_loss(ad::concat_rows(scores), t, e);
            const auto grads = tape.backward(loss);
            sum += loss.value().item();
            ++used;
            const double t0 = static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(per_epoch);
            ad::adamw_step(params, grads, state, oc, ad::lr_at(oc, t0));
        }
        res.epoch_loss.push_back(used ? sum / static_cast<double>(used) : std::nan(""));
    }
    return res;
}

std::vector<double> minmax_normalize(const std::vector<double>& v) {
    if (v.empty()) return {};
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double a = *lo, span = *hi - *lo;
    std::vector<double> out(v.size(), 0.5);
    if (span > 0.0)
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - a) / span;
    return out;
}

namespace {

using MultiFn = std::function<Var(ad::Tape&, const std::vector<Var>&)>;

struct MultiIg {
    std::vector<Tensor> attribution;
    double f_x = 0.0, f_baseline = 0.0, residual = 0.0;
};

Tensor scaled(const Tensor& x, double a) {
    Tensor y = x;
    for (auto& v : y.storage()) v *= a;
    return y;
}

double evaluate(const MultiFn& f, const std::vector<Tensor>& xs, double alpha) {
    ad::Tape tape;
    std::vector<Var> vs;
    for (const auto& x : xs) vs.push_back(tape.constant(scaled(x, alpha)));
    return f(tape, vs).value().item();
}

MultiIg ig_multi(const MultiFn& f, const std::vector<Tensor>& xs, std::size_t steps) {
    HISTOST_REQUIRE(steps >= 1, "integrated_gradients: steps must be >= 1");
    MultiIg r;
    for (const auto& x : xs) r.attribution.emplace_back(x.shape());
    for (std::size_t k = 0; k < steps; ++k) {
        const double alpha = (static_cast<double>(k) + 0.5) / static_cast<double>(steps);
        ad::Tape tape;
        std::vector<Var> vs;
        for (const auto& x : xs) vs.push_back(tape.input(scaled(x, alpha)));
        Var out = f(tape, vs);
        HISTOST_REQUIRE(out.value().size() == 1, "integrated_gradients: function must return a scalar");
        try {
            tape.backward(out);
        } catch (const NumericalError& e) {
            throw NumericalError("integrated_gradients: step " + std::to_string(k) + " (alpha " + format_double(alpha) +
                                 "): " + e.what());
        }
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const Tensor& g = vs[i].grad();
            for (std::size_t j = 0; j < g.size(); ++j) {
                if (!std::isfinite(g[j]))
                    throw NumericalError("integrated_gradients: non-finite gradient at step " + std::to_string(k) +
                                         " (alpha " + format_double(alpha) + ")");
                r.attribution[i][j] += g[j];
            }
        }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = 0; j < xs[i].size(); ++j) {
            r.attribution[i][j] *= xs[i][j] / static_cast<double>(steps);
            total += r.attribution[i][j];
        }
    r.f_x = evaluate(f, xs, 1.0);
    r.f_baseline = evaluate(f, xs, 0.0);
    r.residual = std::abs(total - (r.f_x - r.f_baseline));
    return r;
}

std::vector<double> patch_sums(const Tensor& a) {
    std::vector<double> out(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (double v : a.row(i)) out[i] += v;
    return out;
}

}  // namespace

IgResult integrated_gradients(const TapeFn& f, const Tensor& x, std::size_t steps) {
    const MultiIg m = ig_multi([&](ad::Tape& t, const std::vector<Var>& v) { return f(t, v[0]); }, {x}, steps);
    return {m.attribution[0], m.f_x, m.f_baseline, m.residual};
}

AttributionMap attribute_bag(RiskModel& model, const SlideBag& bag, std::size_t steps) {
    const BagMode mode = model.config().mode;
    std::vector<Tensor> xs;
    {
        ad::Tape check;
        bind_bag(check, model, bag);
    }
    if (uses_he(mode)) xs.push_back(*bag.he);
    if (uses_st(mode)) xs.push_back(*bag.st);
    const MultiIg m = ig_multi(
        [&](ad::Tape& t, const std::vector<Var>& v) {
            BagVars b;
            std::size_t i = 0;
            if (uses_he(mode)) b.he = v[i++];
            if (uses_st(mode)) b.st = v[i++];
            return risk_forward(t, model, b);
        },
        xs, steps);
    AttributionMap a;
    a.slide_id = bag.slide_id;
    a.steps = steps;
    a.f_x = m.f_x;
    a.f_baseline = m.f_baseline;
    a.residual = m.residual;
    const double delta = std::abs(m.f_x - m.f_baseline);
    a.relative_residual = delta > 0.0 ? m.residual / delta : m.residual;
    std::size_t i = 0;
    if (uses_he(mode)) {
        a.he = m.attribution[i++];
        a.he_patch = patch_sums(*a.he);
    }
    if (uses_st(mode)) {
        a.st = m.attribution[i++];
        a.st_patch = patch_sums(*a.st);
    }
    std::vector<double> all = a.he_patch;
    all.insert(all.end(), a.st_patch.begin(), a.st_patch.end());
    const auto norm = minmax_normalize(all);
    a.he_normalized.assign(norm.begin(), norm.begin() + static_cast<long>(a.he_patch.size()));
    a.st_normalized.assign(norm.begin() + static_cast<long>(a.he_patch.size()), norm.end());
    return a;
}

void write_attribution_csv(const fs::path& path, const AttributionMap& map, const SlideBag& bag) {
    std::string out = "modality,patch,x,y,attribution,normalized\n";
    const auto emit = [&](const char* m, const std::vector<double>& raw, const std::vector<double>& norm) {
        for (std::size_t i = 0; i < raw.size(); ++i) {
            std::string x = "NA", y = "NA";
            if (i < bag.coords.size()) {
                x = format_double(bag.coords[i][0]);
                y = format_double(bag.coords[i][1]);
            }
            out += std::string(m) + "," + std::to_string(i) + "," + x + "," + y + "," + format_double(raw[i]) + "," +
                   format_double(norm[i]) + "\n";
        }
    };
    emit("he", map.he_patch, map.he_normalized);
    emit("st", map.st_patch, map.st_normalized);
    write_file_atomic(path, out);
}

void write_risk_csv(const fs::path& path, const std::vector<SurvivalRecord>& records) {
    std::string out = "subject_id,slide_id,time,event,risk\n";
    for (const auto& r : records)
        out += r.subject_id + "," + r.slide_id + "," + format_double(r.time) + "," + std::to_string(r.event) + "," +
               format_double(r.score) + "\n";
    write_file_atomic(path, out);
}

SynthCohort synth_cohort(const CohortSynthConfig& c) {
    HISTOST_REQUIRE(c.n_subjects >= 2 && c.patches >= 1 && c.he_dim >= 1 && c.st_dim >= 1,
                    "synth_cohort: need >= 2 subjects, >= 1 patch and positive feature widths");
    HISTOST_REQUIRE(c.base_hazard > 0.0, "synth_cohort: base_hazard must be positive");
    HISTOST_REQUIRE(c.censor_fraction >= 0.0 && c.censor_fraction < 1.0, "synth_cohort: censor_fraction must lie in [0, 1)");
    HISTOST_REQUIRE(c.signal_fraction > 0.0 && c.signal_fraction <= 1.0, "synth_cohort: signal_fraction must lie in (0, 1]");
    const auto direction = [&](std::size_t d, const char* purpose) {
        Rng rng = make_rng(c.seed, purpose);
        std::vector<double> u(d);
        double norm = 0.0;
        for (auto& v : u) {
            v = standard_normal(rng);
            norm += v * v;
        }
        for (auto& v : u) v /= std::sqrt(norm);
        return u;
    };
    const auto u_he = direction(c.he_dim, "cohort/he_direction");
    const auto u_st = direction(c.st_dim, "cohort/st_direction");
    const auto n_signal = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(c.signal_fraction * static_cast<double>(c.patches))));

    SynthCohort out;
    for (std::size_t s = 0; s < c.n_subjects; ++s) {
        Rng rng = make_rng(c.seed, "cohort/subject", s);
        const double z = standard_normal(rng);
        SurvivalRecord r;
        r.subject_id = "subject" + std::to_string(s);
        r.slide_id = "slide" + std::to_string(s);
        const double rate = c.base_hazard * std::exp(c.log_hazard * z);
        const double t = -std::log(1.0 - uniform01(rng)) / rate;
        const bool censored = uniform01(rng) < c.censor_fraction;
        r.time = censored ? t * (0.05 + 0.95 * uniform01(rng)) : t;
        r.event = censored ? 0 : 1;

        std::vector<std::size_t> order(c.patches);
        std::iota(order.begin(), order.end(), 0);
        histost::shuffle(order.begin(), order.end(), rng);
        std::vector<char> signal(c.patches, 0);
        for (std::size_t k = 0; k < n_signal; ++k) signal[order[k]] = 1;

        SlideBag bag;
        bag.slide_id = r.slide_id;
        const std::size_t side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(c.patches))));
        const auto tokens = [&](std::size_t d, const std::vector<double>& u) {
            Tensor x(Tensor::Shape{c.patches, d});
            for (std::size_t p = 0; p < c.patches; ++p)
                for (std::size_t j = 0; j < d; ++j) x.at(p, j) = standard_normal(rng) + (signal[p] ? c.signal * z * u[j] : 0.0);
            return x;
        };
        bag.he = tokens(c.he_dim, u_he);
        bag.st = tokens(c.st_dim, u_st);
        for (std::size_t p = 0; p < c.patches; ++p)
            bag.coords.push_back({55.0 * static_cast<double>(p % side), 55.0 * static_cast<double>(p / side)});
        out.cohort.records.push_back(std::move(r));
        out.bags.push_back(std::move(bag));
        out.risk_factor.push_back(z);
    }
    return out;
}

}  // namespace histost::clin
