#include <doctest.h>

#include <filesystem>
#include <set>

#include "vibemil/error.hpp"
#include "vibemil/pipeline.hpp"

using namespace vibemil;
using namespace vibemil::pipeline;
namespace fs = std::filesystem;

namespace {

synth::SynthSpec tiny_spec() {
    synth::SynthSpec s;
    s.n_pos = 10;
    s.n_neg = 10;
    s.days_min = 1;
    s.days_max = 2;
    s.frames_min = 1200;
    s.frames_max = 1600;
    s.burst_min_frames = 200;
    s.burst_max_frames = 400;
    s.burst_slot_frames = 800;
    s.seed = 5;
    return s;
}

RunConfig tiny_config() {
    RunConfig c;
    c.seed = 3;
    c.k = 3;
    c.holdout_fraction = 0.25;
    c.windowing = {50, 25};
    c.gbt_level.n_estimators = c.gbt_leaf.n_estimators = 15;
    c.gbt_level.early_stop_patience = c.gbt_leaf.early_stop_patience = 15;
    c.gbt_level.min_child_weight = c.gbt_leaf.min_child_weight = 0.1;
    c.mil.epochs = 2;
    c.mil.patience = 2;
    return c;
}

const FeatureSet& tiny_features() {
    static const FeatureSet fs = featurize_synthetic(tiny_spec(), tiny_config().windowing);
    return fs;
}

}  // namespace

TEST_CASE("in-memory featurization matches the on-disk route") {
    auto spec = tiny_spec();
    spec.n_pos = spec.n_neg = 2;
    const auto dir = fs::temp_directory_path() / "vibemil_pipeline_cohort";
    fs::remove_all(dir);
    synth::generate_cohort(spec, dir);
    const auto disk = featurize_dir(dir, tiny_config().windowing, 2);
    const auto mem = featurize_synthetic(spec, tiny_config().windowing);
    REQUIRE(disk.subjects.size() == mem.subjects.size());
    for (std::size_t i = 0; i < mem.subjects.size(); ++i) {
        CHECK(disk.subjects[i].subject_id == mem.subjects[i].subject_id);
        CHECK(disk.subjects[i].vector.values == mem.subjects[i].vector.values);
        CHECK(disk.subjects[i].bags.size() == mem.subjects[i].bags.size());
    }
    fs::remove_all(dir);
}

TEST_CASE("days without windows are skipped and empty subjects dropped") {
    features::WindowBag empty;
    empty.subject_id = "x";
    empty.rows.resize(0, static_cast<Eigen::Index>(features::kWindowDim));
    features::WindowBag full = empty;
    full.day_index = 1;
    full.rows = RowMatrix::Ones(3, static_cast<Eigen::Index>(features::kWindowDim));
    SubjectFeatures out;
    std::vector<std::string> warnings;
    CHECK(assemble_subject("x", ingest::Group::PVH, {empty, full}, out, warnings));
    CHECK(out.bags.size() == 1);
    CHECK(out.vector.values.back() == 1.0);
    CHECK(warnings.size() == 1);
    CHECK_FALSE(assemble_subject("x", ingest::Group::PVH, {empty}, out, warnings));
    CHECK(warnings.size() == 3);
}

TEST_CASE("task labels put both control groups on the negative side") {
    FeatureSet fs;
    for (auto [id, g] : std::vector<std::pair<std::string, ingest::Group>>{
             {"a", ingest::Group::PVH}, {"b", ingest::Group::NPVH}, {"c", ingest::Group::NORMAL}}) {
        SubjectFeatures s;
        s.subject_id = id;
        s.group = g;
        fs.subjects.push_back(s);
    }
    const auto pvh = task_subjects(fs, validation::make_task(validation::Task::PVH));
    const auto npvh = task_subjects(fs, validation::make_task(validation::Task::NPVH));
    REQUIRE(pvh.size() == 3);
    CHECK(pvh[0].y == 1);
    CHECK(pvh[1].y == 0);
    CHECK(pvh[2].y == 0);
    CHECK(npvh[1].y == 1);
    CHECK(npvh[0].y == 0);
    CHECK_THROWS_AS(fs.at("zz"), Error);
}

TEST_CASE("fold split never includes the held-out fold") {
    const auto& feats = tiny_features();
    const auto subjects = task_subjects(feats, validation::make_task(validation::Task::PVH));
    const auto folds = make_folds(subjects, 3, 3);
    for (int f = 0; f < 3; ++f) {
        const auto split = fold_split(subjects, folds, f, 0.25, 3);
        std::set<std::string> seen;
        for (const auto* part : {&split.train, &split.holdout})
            for (const auto& s : *part) {
                CHECK(folds.fold_of.at(s.subject_id) != f);
                CHECK(seen.insert(s.subject_id).second);
            }
        CHECK(seen.size() + folds.subjects_in(f).size() == subjects.size());
        CHECK_FALSE(split.holdout.empty());
    }
}

TEST_CASE("fold models do not depend on the subjects they score") {
    const auto cfg = tiny_config();
    const auto& base = tiny_features();
    const auto subjects = task_subjects(base, validation::make_task(cfg.task));
    const auto folds = make_folds(subjects, cfg.k, cfg.seed);

    // Scramble everything known about fold 0's subjects.
    FeatureSet poisoned = base;
    for (auto& s : poisoned.subjects) {
        if (folds.fold_of.at(s.subject_id) != 0) continue;
        for (double& v : s.vector.values) v = v * 10.0 + 5.0;
        for (auto& b : s.bags) b.rows = b.rows.array() * -3.0 + 1.0;
    }
    const auto a = cross_validate_gbt(base, subjects, folds, cfg, ModelKind::GbtLeaf);
    const auto b = cross_validate_gbt(poisoned, subjects, folds, cfg, ModelKind::GbtLeaf);
    CHECK(gbt::model_to_json(a.models[0]) == gbt::model_to_json(b.models[0]));
    CHECK(gbt::model_to_json(a.models[1]) != gbt::model_to_json(b.models[1]));

    const auto ma = cross_validate_mil(base, subjects, folds, cfg);
    const auto mb = cross_validate_mil(poisoned, subjects, folds, cfg);
    CHECK(mil::checkpoint_bytes(ma.folds[0].model) == mil::checkpoint_bytes(mb.folds[0].model));
    CHECK(ma.folds[0].scaler.median == mb.folds[0].scaler.median);

    for (const auto& p : a.oof) CHECK(p.fold == folds.fold_of.at(p.subject_id));
    CHECK(a.oof.size() == subjects.size());
    CHECK(ma.oof.size() == subjects.size());
}

TEST_CASE("combining out-of-fold tables checks consistency") {
    const std::vector<validation::LabeledSubject> subjects = {{"a", 1}, {"b", 0}};
    validation::FoldAssignment folds;
    folds.k = 2;
    folds.fold_of = {{"a", 0}, {"b", 1}};
    const std::vector<OofPrediction> ok = {{"a", 0, 1, 0.9}, {"b", 1, 0, 0.2}};
    const auto t = combine_oof(ok, ok, ok, folds, subjects);
    CHECK(t.rows.size() == 2);
    CHECK(t.rows[0].p_cnn == 0.9);

    const auto code = [&](std::vector<OofPrediction> bad) {
        try {
            combine_oof(ok, bad, ok, folds, subjects);
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::IoError;
    };
    CHECK(code({{"a", 0, 1, 0.9}}) == ErrorCode::MissingSubject);
    CHECK(code({{"a", 0, 1, 0.9}, {"a", 0, 1, 0.9}, {"b", 1, 0, 0.2}}) == ErrorCode::DuplicateSubject);
    CHECK(code({{"a", 1, 1, 0.9}, {"b", 1, 0, 0.2}}) == ErrorCode::SchemaError);
    CHECK(code({{"a", 0, 0, 0.9}, {"b", 1, 0, 0.2}}) == ErrorCode::SchemaError);
    CHECK(code({{"a", 0, 1, 0.9}, {"b", 1, 0, 0.2}, {"c", 0, 0, 0.1}}) == ErrorCode::UnknownSubject);
}

TEST_CASE("end-to-end task run is deterministic and the ensemble beats every single model") {
    const auto cfg = tiny_config();
    const auto r = run_task(tiny_features(), cfg);
    const auto again = run_task(tiny_features(), cfg);
    CHECK(validation::oof_table_csv(r.oof) == validation::oof_table_csv(again.oof));
    CHECK(r.weights.cnn == again.weights.cnn);
    CHECK(r.weights.gbt_level == again.weights.gbt_level);
    CHECK(r.oof.rows.size() == 20);

    const auto a = ablation(r);
    CHECK(a.delta >= 0.0);
    CHECK(a.ensemble >= a.level_leaf);
    CHECK(a.ensemble >= a.level_cnn);
    CHECK(a.ensemble >= a.leaf_cnn);

    const std::vector<TaskResult> results = {r};
    const auto md = ablation_report(results, "00ff", 3);
    for (const char* row : {"GBT level-wise only", "GBT leaf-wise only", "CNN-MIL only", "Level + Leaf (equal)",
                            "Level + CNN-MIL (equal)", "Leaf + CNN-MIL (equal)", "Full ensemble (opt.)",
                            "Δ vs best single", "config_hash=00ff"})
        CHECK(md.find(row) != std::string::npos);
}

TEST_CASE("model names parse both ways") {
    for (auto m : {ModelKind::GbtLevel, ModelKind::GbtLeaf, ModelKind::Mil}) CHECK(parse_model(to_string(m)) == m);
    CHECK_THROWS_AS(parse_model("svm"), Error);
}
