#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "vibemil/config.hpp"
#include "vibemil/ensemble.hpp"
#include "vibemil/error.hpp"
#include "vibemil/features.hpp"
#include "vibemil/gbt.hpp"
#include "vibemil/ingest.hpp"
#include "vibemil/mil.hpp"
#include "vibemil/pipeline.hpp"
#include "vibemil/synth.hpp"
#include "vibemil/validation.hpp"

namespace py = pybind11;
using namespace vibemil;

namespace {

using Frames = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

ingest::DayRecording to_recording(const Frames& values, const std::vector<bool>& voiced) {
    if (values.cols() != static_cast<Eigen::Index>(ingest::kNumFeatures))
        fail(ErrorCode::ArityMismatch, "frames must have 14 columns");
    if (static_cast<Eigen::Index>(voiced.size()) != values.rows())
        fail(ErrorCode::ArityMismatch, "voiced mask length differs from frame count");
    ingest::DayRecording rec;
    rec.frames.resize(voiced.size());
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        for (Eigen::Index j = 0; j < values.cols(); ++j) rec.frames[static_cast<std::size_t>(i)].values[static_cast<std::size_t>(j)] = values(i, j);
        rec.frames[static_cast<std::size_t>(i)].voiced = voiced[static_cast<std::size_t>(i)];
    }
    return rec;
}

template <typename T>
void read_key(const py::dict& d, const char* key, T& out) {
    if (d.contains(key)) out = d[key].cast<T>();
}

gbt::GbtConfig gbt_config(const py::dict& d) {
    gbt::GbtConfig c;
    read_key(d, "n_estimators", c.n_estimators);
    read_key(d, "max_depth", c.max_depth);
    read_key(d, "learning_rate", c.learning_rate);
    read_key(d, "row_subsample", c.row_subsample);
    read_key(d, "col_subsample", c.col_subsample);
    read_key(d, "l1_alpha", c.l1_alpha);
    read_key(d, "l2_lambda", c.l2_lambda);
    read_key(d, "early_stop_patience", c.early_stop_patience);
    read_key(d, "max_leaves", c.max_leaves);
    read_key(d, "n_bins", c.n_bins);
    read_key(d, "min_child_weight", c.min_child_weight);
    read_key(d, "pos_weight", c.pos_weight);
    read_key(d, "seed", c.seed);
    if (d.contains("growth")) c.growth = gbt::parse_growth(d["growth"].cast<std::string>());
    return c;
}

py::dict weights_dict(const ensemble::EnsembleWeights& w) {
    py::dict d;
    d["cnn"] = w.w_cnn();
    d["gbt_level"] = w.w_gbt_level();
    d["gbt_leaf"] = w.w_gbt_leaf();
    d["units"] = py::make_tuple(w.cnn, w.gbt_level, w.gbt_leaf, w.denominator);
    d["oof_auc"] = w.achieved_oof_auc;
    return d;
}

validation::OofTable oof_from_arrays(const std::vector<double>& p_cnn, const std::vector<double>& p_level,
                                     const std::vector<double>& p_leaf, const std::vector<int>& y) {
    if (p_cnn.size() != y.size() || p_level.size() != y.size() || p_leaf.size() != y.size())
        fail(ErrorCode::ArityMismatch, "score arrays and labels differ in length");
    validation::OofTable t;
    for (std::size_t i = 0; i < y.size(); ++i)
        t.rows.push_back({std::to_string(i), 0, y[i], p_cnn[i], p_level[i], p_leaf[i]});
    return t;
}

}  // namespace

PYBIND11_MODULE(_vibemil, m) {
    m.doc() = "Voice-feature MIL and gradient-boosting ensemble";

    static py::exception<Error> error(m, "Error");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object exc = error;
            PyErr_SetObject(exc.ptr(), py::make_tuple(std::string(to_string(e.code())), e.what()).ptr());
        }
    });

    m.attr("FEATURE_ORDER") = [] {
        std::vector<std::string> names;
        for (auto n : ingest::kFeatureOrder) names.emplace_back(n);
        return names;
    }();
    m.attr("WINDOW_DIM") = features::kWindowDim;
    m.attr("DAY_DIM") = features::kDayDim;
    m.attr("SUBJECT_DIM") = features::kSubjectDim;

    m.def("clean_value", &ingest::clean_value, py::arg("value"));
    m.def("window_count", [](std::size_t n, std::size_t window, std::size_t hop) {
        return features::window_count(n, {window, hop});
    }, py::arg("n_voiced"), py::arg("window") = features::kWindowFrames, py::arg("hop") = features::kWindowHop);
    m.def("distribution_stats", [](const std::vector<double>& x) {
        const auto s = features::distribution_stats(x);
        return std::vector<double>(s.begin(), s.end());
    }, py::arg("values"), "mean, std, median, skew, kurtosis, p5, p25, p75, p95, iqr, mad");
    m.def("window_bag", [](const Frames& values, const std::vector<bool>& voiced, std::size_t window, std::size_t hop) {
        return features::make_window_bag(to_recording(values, voiced), {window, hop}).rows;
    }, py::arg("frames"), py::arg("voiced"), py::arg("window") = features::kWindowFrames,
       py::arg("hop") = features::kWindowHop, "Clean, mask and window one day; returns an N x 56 matrix.");
    m.def("day_vector", [](const RowMatrix& bag) {
        features::WindowBag b;
        b.rows = bag;
        return features::day_distributional(b).values;
    }, py::arg("bag"), "618-entry day summary (the voiced ratio entry is left at 0).");

    m.def("roc_auc", [](const std::vector<double>& s, const std::vector<int>& y) { return validation::roc_auc(s, y); },
          py::arg("scores"), py::arg("labels"));
    m.def("stratified_folds", [](const std::vector<std::string>& ids, const std::vector<int>& y, int k, std::uint64_t seed) {
        if (ids.size() != y.size()) fail(ErrorCode::ArityMismatch, "ids and labels differ in length");
        std::vector<validation::LabeledSubject> s;
        for (std::size_t i = 0; i < ids.size(); ++i) s.push_back({ids[i], y[i]});
        return validation::stratified_group_kfold(s, k, seed).fold_of;
    }, py::arg("subject_ids"), py::arg("labels"), py::arg("k") = 5, py::arg("seed") = 42);

    m.def("grid_search_weights", [](const std::vector<double>& p_cnn, const std::vector<double>& p_level,
                                    const std::vector<double>& p_leaf, const std::vector<int>& y, double step) {
        return weights_dict(ensemble::grid_search_weights(oof_from_arrays(p_cnn, p_level, p_leaf, y), step));
    }, py::arg("p_cnn"), py::arg("p_gbt_level"), py::arg("p_gbt_leaf"), py::arg("labels"), py::arg("step") = 0.05);
    m.def("blend", [](double c, double l, double f, std::tuple<int, int, int, int> units) {
        const auto [a, b, d, den] = units;
        return ensemble::blend(c, l, f, {a, b, d, den, 0.0});
    }, py::arg("p_cnn"), py::arg("p_gbt_level"), py::arg("p_gbt_leaf"), py::arg("units"));

    m.def("train_gbt", [](const RowMatrix& X, const std::vector<int>& y, const RowMatrix& X_val,
                          const std::vector<int>& y_val, const py::dict& cfg) {
        return gbt::model_to_json(gbt::train_gbt(gbt_config(cfg), X, y, X_val, y_val));
    }, py::arg("X"), py::arg("y"), py::arg("X_val"), py::arg("y_val"), py::arg("config") = py::dict(),
       "Returns the model as JSON text.");
    m.def("predict_gbt", [](const std::string& model_json, const RowMatrix& X) {
        return gbt::predict_gbt(gbt::model_from_json(model_json), X);
    }, py::arg("model_json"), py::arg("X"));

    m.def("mil_parameter_count", &mil::parameter_count);
    m.def("mil_forward", [](std::uint64_t init_seed, const RowMatrix& bag) {
        const auto p = mil::init_params<double>(init_seed);
        mil::MilConfig cfg;
        const auto out = mil::forward<double>(p, cfg, bag, false, nullptr);
        return py::make_tuple(out.logit, Eigen::MatrixXd(out.attention));
    }, py::arg("init_seed"), py::arg("bag"), "Eval-mode logit and attention of a freshly initialized network.");

    m.def("synth_spec_json", [] { return synth::spec_to_json(synth::SynthSpec{}); }, "Default generator spec as JSON.");
    m.def("generate_cohort", [](const std::filesystem::path& dir, const std::string& spec_json) {
        synth::generate_cohort(synth::spec_from_json(spec_json), dir);
    }, py::arg("dir"), py::arg("spec_json"));

    m.def("config_hash", [](const std::filesystem::path& path) { return config_hash(load_config(path)); },
          py::arg("config_path"));
    m.def("run_task", [](const std::filesystem::path& config_path, const std::string& task) {
        auto cfg = load_config(config_path);
        if (!task.empty()) cfg.task = validation::parse_task(task);
        const auto fs = pipeline::featurize_dir(cfg.data_dir, cfg.windowing, cfg.threads);
        const auto r = pipeline::run_task(fs, cfg);
        py::dict out;
        out["weights"] = weights_dict(r.weights);
        py::list rows;
        for (const auto& row : r.oof.rows) {
            py::dict d;
            d["subject_id"] = row.subject_id;
            d["fold"] = row.fold;
            d["y"] = row.y;
            d["p_cnn"] = row.p_cnn;
            d["p_gbt_level"] = row.p_gbt_level;
            d["p_gbt_leaf"] = row.p_gbt_leaf;
            rows.append(d);
        }
        out["oof"] = rows;
        const auto a = pipeline::ablation(r);
        out["single_auc"] = py::dict(py::arg("cnn") = a.single.cnn, py::arg("gbt_level") = a.single.gbt_level,
                                     py::arg("gbt_leaf") = a.single.gbt_leaf);
        out["delta"] = a.delta;
        return out;
    }, py::arg("config_path"), py::arg("task") = "",
       "Featurize data_dir, cross-validate all three models and fit the ensemble, in memory.");
}
