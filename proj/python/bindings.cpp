// SPDX-License-Identifier: Apache-2.0
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "histost/cli/cli.hpp"
#include "histost/clinical/survival.hpp"
#include "histost/common/errors.hpp"
#include "histost/core/checkpoint.hpp"
#include "histost/core/pretrain.hpp"
#include "histost/data/expression.hpp"
#include "histost/data/slide.hpp"
#include "histost/data/synth.hpp"
#include "histost/domains/cluster.hpp"
#include "histost/domains/metrics.hpp"
#include "histost/vst/virtual_st.hpp"

namespace py = pybind11;
using namespace histost;
using ad::Tensor;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
    Array out({t.rows(), t.cols()});
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

Tensor from_numpy(const Array& a) {
    if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
    const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
    return Tensor(Tensor::Shape{r, c}, std::vector<double>(a.data(), a.data() + r * c));
}

Array patch_features(const data::SlideDataset& s) {
    Array out({s.size(), s.feature_dim});
    double* p = out.mutable_data();
    for (const auto& sp : s.spots) p = std::copy(sp.patch_features.begin(), sp.patch_features.end(), p);
    return out;
}

Array coordinates(const data::SlideDataset& s) {
    Array out({s.size(), std::size_t{2}});
    auto m = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& sp = s.spots[i];
        const bool grid = s.mode == data::CoordinateMode::Grid;
        m(i, 0) = grid ? sp.col : sp.x_um;
        m(i, 1) = grid ? sp.row : sp.y_um;
    }
    return out;
}

dom::Coords to_coords(const Array& a) {
    if (a.ndim() != 2 || a.shape(1) != 2) throw py::value_error("coordinates must have shape (n, 2)");
    dom::Coords c(static_cast<std::size_t>(a.shape(0)));
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = {a.at(i, 0), a.at(i, 1)};
    return c;
}

/// Backbone model; slides are prepared into a corpus on each call.
class Model {
public:
    Model(const std::string& config_json, std::uint64_t seed)
        : model_(core::model_config_from_json(config_json, "config"), seed) {}

    static Model load(const fs::path& config, const fs::path& checkpoint) {
        Model m(read_file(config), 0);
        core::apply_checkpoint(m.model_.params(), core::load_checkpoint(checkpoint));
        return m;
    }

    std::vector<double> pretrain(const std::vector<data::SlideDataset>& slides, std::size_t steps, std::size_t epochs,
                                 std::size_t batch_size, double lr, std::uint64_t seed) {
        const core::Corpus corpus = prepare(slides);
        ad::OptimizerConfig oc;
        oc.base_lr = lr;
        oc.warmup_epochs = 0.1;
        oc.total_epochs = static_cast<double>(epochs);
        oc.batch_size = static_cast<int>(batch_size);
        core::PretrainOptions po;
        po.batch_size = batch_size;
        po.epochs = epochs;
        po.max_steps = steps;
        po.seed = seed;
        py::gil_scoped_release release;
        return core::pretrain_run(model_, corpus, oc, po).step_loss;
    }

    Array encode(const std::vector<data::SlideDataset>& slides, std::size_t index, bool he_only) {
        const core::Corpus corpus = prepare(slides);
        if (index >= corpus.slides.size()) throw py::index_error("slide index out of range");
        Tensor t;
        {
            py::gil_scoped_release release;
            t = he_only ? core::encode_slide_he_only(model_, corpus, index, 32) : core::encode_slide(model_, corpus, index, 32);
        }
        return to_numpy(t);
    }

    std::string checksum() const { return core::params_checksum(model_.params()); }
    std::string config_json() const { return core::model_config_to_json(model_.config()); }
    void save(const fs::path& checkpoint) const { core::save_checkpoint(checkpoint, core::collect_params(model_.params())); }

private:
    core::Corpus prepare(const std::vector<data::SlideDataset>& slides) const {
        return core::prepare_corpus(slides, model_.config().grid_size, model_.config().knn);
    }
    core::SpatialModel model_;
};

}  // namespace

PYBIND11_MODULE(_histost, m) {
    m.doc() = "Spatial histology and transcriptomics toolkit";

    py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<LookupError>(m, "NotFoundError", PyExc_KeyError);

    py::class_<data::SlideDataset>(m, "Slide")
        .def_readonly("slide_id", &data::SlideDataset::slide_id)
        .def_readonly("feature_dim", &data::SlideDataset::feature_dim)
        .def_property_readonly("genes", [](const data::SlideDataset& s) { return s.panel.genes; })
        .def_property_readonly("spot_ids",
                               [](const data::SlideDataset& s) {
                                   std::vector<std::string> ids;
                                   for (const auto& sp : s.spots) ids.push_back(sp.id);
                                   return ids;
                               })
        .def_property_readonly("labels", [](const data::SlideDataset& s) { return data::label_ids(s); })
        .def_property_readonly("counts", [](const data::SlideDataset& s) { return to_numpy(data::dense_counts(s)); })
        .def_property_readonly("features", &patch_features)
        .def_property_readonly("coords", &coordinates)
        .def("__len__", &data::SlideDataset::size);

    m.def(
        "synth_slide",
        [](const std::string& slide_id, int rows, int cols, int n_domains, int n_genes, int feature_dim, std::uint64_t seed,
           std::uint64_t program_seed, double base_mean, double domain_log_fold, double morph_noise, double joint_fraction) {
            data::SynthConfig c;
            c.slide_id = slide_id;
            c.rows = rows;
            c.cols = cols;
            c.n_domains = n_domains;
            c.n_genes = n_genes;
            c.feature_dim = feature_dim;
            c.seed = seed;
            c.program_seed = program_seed;
            c.base_mean = base_mean;
            c.domain_log_fold = domain_log_fold;
            c.morph_noise = morph_noise;
            c.joint_fraction = joint_fraction;
            return data::synth_tissue(c);
        },
        py::arg("slide_id") = "synth", py::arg("rows") = 32, py::arg("cols") = 32, py::arg("n_domains") = 4, py::arg("n_genes") = 100,
        py::arg("feature_dim") = 32, py::arg("seed") = 0, py::arg("program_seed") = 0, py::arg("base_mean") = 6.0,
        py::arg("domain_log_fold") = 1.0, py::arg("morph_noise") = 1.0, py::arg("joint_fraction") = 0.0);
    m.def("save_slide", &data::save_slide, py::arg("slide"), py::arg("directory"));
    m.def("load_slide", &data::load_slide, py::arg("manifest"));
    m.def(
        "normalize",
        [](const Array& counts) {
            return to_numpy(data::normalize_expression(from_numpy(counts)).values);
        },
        py::arg("counts"));
    m.def(
        "select_hvg", [](const Array& x, std::size_t k) { return data::select_hvg(from_numpy(x), k); }, py::arg("normalized"), py::arg("k"));

    py::class_<Model>(m, "Model")
        .def(py::init<const std::string&, std::uint64_t>(), py::arg("config_json"), py::arg("seed") = 0)
        .def_static("load", &Model::load, py::arg("config"), py::arg("checkpoint"))
        .def("pretrain", &Model::pretrain, py::arg("slides"), py::arg("steps") = 200, py::arg("epochs") = 2, py::arg("batch_size") = 8,
             py::arg("lr") = 1e-3, py::arg("seed") = 0)
        .def("encode", &Model::encode, py::arg("slides"), py::arg("index") = 0, py::arg("he_only") = false)
        .def("checksum", &Model::checksum)
        .def("config_json", &Model::config_json)
        .def("save", &Model::save, py::arg("checkpoint"));

    m.def(
        "kmeans",
        [](const Array& x, std::size_t k, std::uint64_t seed, std::size_t n_init) {
            dom::KMeansOptions o;
            o.n_init = n_init;
            const auto r = dom::kmeans(from_numpy(x), k, seed, o);
            return py::make_tuple(r.labels, r.inertia, to_numpy(r.centroids));
        },
        py::arg("x"), py::arg("k"), py::arg("seed") = 0, py::arg("n_init") = 10);
    m.def(
        "pca", [](const Array& x, std::size_t n) { return to_numpy(dom::pca_project(from_numpy(x), n)); }, py::arg("x"),
        py::arg("components"));
    m.def(
        "external_metrics",
        [](const std::vector<int>& pred, const std::vector<int>& truth) {
            const auto e = dom::external_metrics(pred, truth);
            return py::dict(py::arg("NMI") = e.nmi, py::arg("ARI") = e.ari, py::arg("FMI") = e.fmi, py::arg("HOM") = e.hom,
                            py::arg("COM") = e.com);
        },
        py::arg("pred"), py::arg("truth"));
    m.def(
        "chaos", [](const std::vector<int>& l, const Array& c) { return dom::chaos(l, to_coords(c)); }, py::arg("labels"),
        py::arg("coords"));
    m.def(
        "pas",
        [](const std::vector<int>& l, const Array& c, std::size_t k, std::size_t thr) { return dom::pas(l, to_coords(c), k, thr); },
        py::arg("labels"), py::arg("coords"), py::arg("k") = 10, py::arg("threshold") = 6);
    m.def(
        "asw", [](const std::vector<int>& l, const Array& x) { return dom::asw(l, from_numpy(x)); }, py::arg("labels"), py::arg("x"));

    m.def(
        "pcc_genewise",
        [](const Array& pred, const Array& truth) {
            std::vector<std::string> genes;
            for (py::ssize_t j = 0; j < pred.shape(1); ++j) genes.push_back(std::to_string(j));
            std::vector<std::optional<double>> out;
            for (const auto& s : vst::pcc_genewise(from_numpy(pred), from_numpy(truth), genes)) out.push_back(s.pcc);
            return out;
        },
        py::arg("pred"), py::arg("truth"));

    m.def("c_index", [](const std::vector<double>& s, const std::vector<double>& t, const std::vector<int>& e) { return clin::c_index(s, t, e); },
          py::arg("scores"), py::arg("times"), py::arg("events"));
    m.def(
        "km_curve",
        [](const std::vector<double>& t, const std::vector<int>& e) {
            std::vector<std::pair<double, double>> out;
            for (const auto& p : clin::km_curve(t, e)) out.emplace_back(p.time, p.survival);
            return out;
        },
        py::arg("times"), py::arg("events"));
    m.def(
        "logrank",
        [](const std::vector<double>& ta, const std::vector<int>& ea, const std::vector<double>& tb, const std::vector<int>& eb) {
            const auto r = clin::logrank(ta, ea, tb, eb);
            return py::make_tuple(r.statistic, r.p);
        },
        py::arg("times_a"), py::arg("events_a"), py::arg("times_b"), py::arg("events_b"));
    m.def(
        "cox_fit",
        [](const Array& x, const std::vector<double>& t, const std::vector<int>& e) {
            const auto f = clin::cox_fit(from_numpy(x), t, e);
            return py::dict(py::arg("beta") = f.beta, py::arg("hr") = f.hr, py::arg("se") = f.se, py::arg("p") = f.p,
                            py::arg("monotone") = f.monotone);
        },
        py::arg("x"), py::arg("times"), py::arg("events"));

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            const int code = cli::dispatch(args, out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));
}
