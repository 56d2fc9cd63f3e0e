#include "vibemil/pipeline.hpp"

#include <algorithm>
#include <map>
#include <thread>

#include "vibemil/error.hpp"
#include "vibemil/format.hpp"
#include "vibemil/random.hpp"

namespace vibemil::pipeline {

namespace {

void say(const Logger& log, const std::string& msg) {
    if (log) log(msg);
}

std::map<std::string, int> label_map(std::span<const validation::LabeledSubject> subjects) {
    std::map<std::string, int> y;
    for (const auto& s : subjects) y[s.subject_id] = s.y;
    return y;
}

std::vector<int> labels_of(std::span<const validation::LabeledSubject> subjects) {
    std::vector<int> y;
    y.reserve(subjects.size());
    for (const auto& s : subjects) y.push_back(s.y);
    return y;
}

double subject_pos_weight(std::span<const validation::LabeledSubject> subjects) {
    return validation::compute_pos_weight(labels_of(subjects));
}

}  // namespace

const SubjectFeatures& FeatureSet::at(const std::string& subject_id) const {
    const auto it = std::lower_bound(subjects.begin(), subjects.end(), subject_id,
                                     [](const SubjectFeatures& s, const std::string& id) { return s.subject_id < id; });
    if (it == subjects.end() || it->subject_id != subject_id)
        fail(ErrorCode::MissingSubject, "no features for subject " + subject_id);
    return *it;
}

bool assemble_subject(const std::string& subject_id, ingest::Group group, std::vector<features::WindowBag> bags,
                      SubjectFeatures& out, std::vector<std::string>& warnings) {
    out = SubjectFeatures{};
    out.subject_id = subject_id;
    out.group = group;
    for (auto& bag : bags) {
        if (bag.n_windows() == 0) {
            warnings.push_back("subject " + subject_id + " day " + std::to_string(bag.day_index) +
                               ": fewer than one window of voiced frames, day skipped");
            continue;
        }
        out.days.push_back(features::day_distributional(bag));
        out.bags.push_back(std::move(bag));
    }
    if (out.bags.empty()) {
        warnings.push_back("subject " + subject_id + ": no usable day, subject dropped");
        return false;
    }
    out.vector = features::subject_aggregate(out.days);
    return true;
}

FeatureSet featurize_dir(const std::filesystem::path& cohort_dir, const features::WindowingParams& w, int threads) {
    const auto index = ingest::scan_cohort_dir(cohort_dir);
    std::vector<ingest::RecordingKey> keys;
    for (const auto& e : index.entries) keys.push_back(e.key);
    ingest::validate_cohort(keys, index.labels);

    const std::size_t n = index.entries.size();
    std::vector<features::WindowBag> bags(n);
    const std::size_t workers = std::max<std::size_t>(1, static_cast<std::size_t>(threads));
    const auto work = [&](std::size_t i) {
        const auto& entry = index.entries[i];
        const auto rec = ingest::read_day_file(entry.path);
        if (rec.subject_id != entry.key.subject_id || rec.day_index != entry.key.day_index)
            fail(ErrorCode::SchemaError, entry.path.string() + ": header changed while reading");
        bags[i] = features::make_window_bag(rec, w);
    };
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) work(i);
    } else {
        // Each worker takes a strided share; results land in their fixed slots.
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < workers; ++t)
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t i = t; i < n; i += workers) work(i);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    std::map<std::string, ingest::Group> groups;
    for (const auto& l : index.labels) groups[l.subject_id] = l.group;
    std::map<std::string, std::vector<features::WindowBag>> by_subject;
    for (auto& bag : bags) by_subject[bag.subject_id].push_back(std::move(bag));

    FeatureSet fs;
    for (const auto& [id, group] : groups) {
        auto it = by_subject.find(id);
        if (it == by_subject.end()) {
            fs.warnings.push_back("subject " + id + ": no recordings, subject dropped");
            continue;
        }
        SubjectFeatures s;
        if (assemble_subject(id, group, std::move(it->second), s, fs.warnings)) fs.subjects.push_back(std::move(s));
    }
    return fs;
}

FeatureSet featurize_synthetic(const synth::SynthSpec& spec, const features::WindowingParams& w) {
    spec.validate();
    FeatureSet fs;
    const auto labels = synth::cohort_labels(spec);
    std::vector<std::size_t> order(labels.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return labels[a].subject_id < labels[b].subject_id; });
    for (std::size_t i : order) {
        const auto plan = synth::plan_subject(spec, static_cast<int>(i));
        std::vector<features::WindowBag> bags;
        for (int d = 0; d < static_cast<int>(plan.day_seeds.size()); ++d)
            bags.push_back(features::make_window_bag(synth::generate_day(spec, plan, d).recording, w));
        SubjectFeatures s;
        if (assemble_subject(plan.subject_id, labels[i].group, std::move(bags), s, fs.warnings))
            fs.subjects.push_back(std::move(s));
    }
    return fs;
}

std::vector<validation::LabeledSubject> task_subjects(const FeatureSet& fs, const validation::TaskConfig& task) {
    std::vector<validation::LabeledSubject> out;
    for (const auto& s : fs.subjects) {
        const bool in_pool = s.group == task.positive ||
                             std::find(task.controls.begin(), task.controls.end(), s.group) != task.controls.end();
        if (in_pool) out.push_back({s.subject_id, validation::task_label(task, s.group)});
    }
    return out;
}

validation::FoldAssignment make_folds(std::span<const validation::LabeledSubject> subjects, int k,
                                      std::uint64_t seed) {
    return validation::stratified_group_kfold(subjects, k, derive_seed(seed, stream::kFolds));
}

validation::HoldoutSplit fold_split(std::span<const validation::LabeledSubject> subjects,
                                    const validation::FoldAssignment& folds, int fold, double holdout_fraction,
                                    std::uint64_t seed) {
    std::vector<validation::LabeledSubject> train;
    for (const auto& s : subjects) {
        const auto it = folds.fold_of.find(s.subject_id);
        if (it == folds.fold_of.end()) fail(ErrorCode::MissingSubject, "subject " + s.subject_id + " has no fold");
        if (it->second != fold) train.push_back(s);
    }
    return validation::group_holdout(train, holdout_fraction,
                                     derive_seed(seed, stream::kHoldout + static_cast<std::uint64_t>(fold)));
}

RowMatrix subject_matrix(const FeatureSet& fs, std::span<const std::string> subject_ids) {
    RowMatrix X(static_cast<Eigen::Index>(subject_ids.size()), static_cast<Eigen::Index>(features::kSubjectDim));
    for (std::size_t i = 0; i < subject_ids.size(); ++i) {
        const auto& v = fs.at(subject_ids[i]).vector.values;
        if (v.size() != features::kSubjectDim) fail(ErrorCode::ArityMismatch, "subject vector has wrong length");
        for (std::size_t j = 0; j < v.size(); ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
    }
    return X;
}

RowMatrix subject_matrix(const FeatureSet& fs, std::span<const validation::LabeledSubject> subjects) {
    std::vector<std::string> ids;
    for (const auto& s : subjects) ids.push_back(s.subject_id);
    return subject_matrix(fs, ids);
}

std::string_view to_string(ModelKind m) noexcept {
    switch (m) {
        case ModelKind::GbtLevel: return "gbt-level";
        case ModelKind::GbtLeaf: return "gbt-leaf";
        case ModelKind::Mil: return "mil";
    }
    return "?";
}

ModelKind parse_model(std::string_view text) {
    if (text == "gbt-level") return ModelKind::GbtLevel;
    if (text == "gbt-leaf") return ModelKind::GbtLeaf;
    if (text == "mil") return ModelKind::Mil;
    fail(ErrorCode::ConfigError, "unknown model '" + std::string(text) + "' (expected gbt-level, gbt-leaf or mil)");
}

GbtCv cross_validate_gbt(const FeatureSet& fs, std::span<const validation::LabeledSubject> subjects,
                         const validation::FoldAssignment& folds, const RunConfig& cfg, ModelKind kind,
                         const Logger& log) {
    if (kind == ModelKind::Mil) fail(ErrorCode::ConfigError, "cross_validate_gbt called for the MIL model");
    const bool level = kind == ModelKind::GbtLevel;
    const auto y_of = label_map(subjects);
    GbtCv out;
    for (int f = 0; f < folds.k; ++f) {
        const auto split = fold_split(subjects, folds, f, cfg.holdout_fraction, cfg.seed);
        gbt::GbtConfig gc = level ? cfg.gbt_level : cfg.gbt_leaf;
        gc.pos_weight = subject_pos_weight(split.train);
        gc.seed = derive_seed(cfg.seed, (level ? stream::kGbtLevel : stream::kGbtLeaf) + static_cast<std::uint64_t>(f));
        auto model = gbt::train_gbt(gc, subject_matrix(fs, split.train), labels_of(split.train),
                                    subject_matrix(fs, split.holdout), labels_of(split.holdout));

        const auto val_ids = folds.subjects_in(f);
        const auto p = gbt::predict_gbt(model, subject_matrix(fs, val_ids));
        for (std::size_t i = 0; i < val_ids.size(); ++i) out.oof.push_back({val_ids[i], f, y_of.at(val_ids[i]), p[i]});
        say(log, std::string(to_string(kind)) + " fold " + std::to_string(f) + ": " +
                     std::to_string(model.best_iteration) + " trees, early-stop AUC " +
                     format_fixed(model.log.empty() ? 0.0 : model.log[static_cast<std::size_t>(
                                      std::max(0, model.best_iteration - 1))].val_auc, 4));
        out.models.push_back(std::move(model));
    }
    return out;
}

std::vector<mil::BagMatrix<float>> mil_inputs(const SubjectFeatures& s, const features::ScalerParams& scaler) {
    std::vector<mil::BagMatrix<float>> out;
    out.reserve(s.bags.size());
    for (const auto& bag : s.bags) out.push_back(mil::to_float_bag(features::apply_scaler(scaler, bag).rows));
    return out;
}

MilCv cross_validate_mil(const FeatureSet& fs, std::span<const validation::LabeledSubject> subjects,
                         const validation::FoldAssignment& folds, const RunConfig& cfg, const Logger& log) {
    const auto y_of = label_map(subjects);
    MilCv out;
    for (int f = 0; f < folds.k; ++f) {
        const auto split = fold_split(subjects, folds, f, cfg.holdout_fraction, cfg.seed);

        std::vector<const features::WindowBag*> fit_bags;
        for (const auto& s : split.train)
            for (const auto& bag : fs.at(s.subject_id).bags) fit_bags.push_back(&bag);
        MilFold fold;
        fold.scaler = features::fit_robust_scaler(fit_bags, cfg.scaler_fraction,
                                                  derive_seed(cfg.seed, stream::kScaler + static_cast<std::uint64_t>(f)));

        std::vector<mil::TrainBag> train;
        for (const auto& s : split.train)
            for (auto& x : mil_inputs(fs.at(s.subject_id), fold.scaler)) train.push_back({std::move(x), s.y});
        std::vector<mil::ValSubject> val;
        for (const auto& s : split.holdout) val.push_back({mil_inputs(fs.at(s.subject_id), fold.scaler), s.y});

        mil::MilConfig mc = cfg.mil;
        mc.pos_weight = subject_pos_weight(split.train);
        mc.seed = derive_seed(cfg.seed, stream::kMil + static_cast<std::uint64_t>(f));
        fold.model = mil::train_mil(mc, train, val);

        for (const auto& id : folds.subjects_in(f)) {
            const double p = mil::predict_subject(fold.model, mil_inputs(fs.at(id), fold.scaler));
            out.oof.push_back({id, f, y_of.at(id), p});
        }
        say(log, "mil fold " + std::to_string(f) + ": best epoch " + std::to_string(fold.model.best_epoch) +
                     " of " + std::to_string(fold.model.log.size()) + ", early-stop AUC " +
                     format_fixed(fold.model.best_val_auc, 4));
        out.folds.push_back(std::move(fold));
    }
    return out;
}

validation::OofTable combine_oof(std::span<const OofPrediction> cnn, std::span<const OofPrediction> gbt_level,
                                 std::span<const OofPrediction> gbt_leaf, const validation::FoldAssignment& folds,
                                 std::span<const validation::LabeledSubject> subjects) {
    std::map<std::string, validation::OofRow> rows;
    const auto y_of = label_map(subjects);
    const auto add = [&](std::span<const OofPrediction> preds, double validation::OofRow::*field, const char* name) {
        std::map<std::string, int> seen;
        for (const auto& p : preds) {
            if (!y_of.count(p.subject_id))
                fail(ErrorCode::UnknownSubject, std::string(name) + " OOF has unknown subject " + p.subject_id);
            if (seen[p.subject_id]++)
                fail(ErrorCode::DuplicateSubject, std::string(name) + " OOF lists " + p.subject_id + " twice");
            const auto fit = folds.fold_of.find(p.subject_id);
            if (fit == folds.fold_of.end() || fit->second != p.fold)
                fail(ErrorCode::SchemaError, std::string(name) + " OOF fold for " + p.subject_id +
                                                 " disagrees with the fold assignment");
            if (p.y != y_of.at(p.subject_id))
                fail(ErrorCode::SchemaError, std::string(name) + " OOF label for " + p.subject_id + " disagrees");
            auto& row = rows[p.subject_id];
            row.subject_id = p.subject_id;
            row.fold = p.fold;
            row.y = p.y;
            row.*field = p.p;
        }
        for (const auto& s : subjects)
            if (!seen.count(s.subject_id))
                fail(ErrorCode::MissingSubject, std::string(name) + " OOF lacks subject " + s.subject_id);
    };
    add(cnn, &validation::OofRow::p_cnn, "mil");
    add(gbt_level, &validation::OofRow::p_gbt_level, "gbt-level");
    add(gbt_leaf, &validation::OofRow::p_gbt_leaf, "gbt-leaf");

    std::vector<std::vector<validation::OofRow>> per_fold(static_cast<std::size_t>(folds.k));
    for (auto& [_, row] : rows) per_fold[static_cast<std::size_t>(row.fold)].push_back(row);
    std::vector<std::string> expected;
    for (const auto& s : subjects) expected.push_back(s.subject_id);
    return validation::pool_oof(per_fold, expected);
}

double SingleAucs::best() const noexcept { return std::max({cnn, gbt_level, gbt_leaf}); }

SingleAucs single_model_aucs(const validation::OofTable& oof) {
    const auto y = oof.labels();
    return {validation::roc_auc(oof.column("cnn"), y), validation::roc_auc(oof.column("gbt_level"), y),
            validation::roc_auc(oof.column("gbt_leaf"), y)};
}

ensemble::EnsembleWeights fit_ensemble(const validation::OofTable& oof, double step) {
    const auto w = ensemble::grid_search_weights(oof, step);
    const auto single = single_model_aucs(oof);
    if (w.achieved_oof_auc < single.best())
        throw std::logic_error("grid optimum " + format_double(w.achieved_oof_auc) +
                               " is below the best single model " + format_double(single.best()));
    return w;
}

TaskResult run_task(const FeatureSet& fs, const RunConfig& cfg, const Logger& log) {
    const auto task = validation::make_task(cfg.task);
    const auto subjects = task_subjects(fs, task);
    const auto folds = make_folds(subjects, cfg.k, cfg.seed);
    const auto level = cross_validate_gbt(fs, subjects, folds, cfg, ModelKind::GbtLevel, log);
    const auto leaf = cross_validate_gbt(fs, subjects, folds, cfg, ModelKind::GbtLeaf, log);
    const auto net = cross_validate_mil(fs, subjects, folds, cfg, log);
    TaskResult r;
    r.task = cfg.task;
    r.oof = combine_oof(net.oof, level.oof, leaf.oof, folds, subjects);
    r.weights = fit_ensemble(r.oof, cfg.ensemble_step);
    return r;
}

Ablation ablation(const TaskResult& r) {
    Ablation a;
    a.single = single_model_aucs(r.oof);
    const auto y = r.oof.labels();
    const auto cnn = r.oof.column("cnn");
    const auto level = r.oof.column("gbt_level");
    const auto leaf = r.oof.column("gbt_leaf");
    // Equal pairs expressed in the search grid's units so they blend bit-identically to grid points.
    const int half = r.weights.denominator / 2;
    const auto pair = [&](int c, int l, int f) {
        if (r.weights.denominator % 2 != 0)
            return validation::roc_auc(ensemble::blend(cnn, level, leaf, {c, l, f, 2, 0.0}), y);
        return validation::roc_auc(ensemble::blend(cnn, level, leaf, {c * half, l * half, f * half, 2 * half, 0.0}), y);
    };
    a.level_leaf = pair(0, 1, 1);
    a.level_cnn = pair(1, 1, 0);
    a.leaf_cnn = pair(1, 0, 1);
    a.ensemble = r.weights.achieved_oof_auc;
    a.delta = a.ensemble - a.single.best();
    return a;
}

std::string ablation_report(std::span<const TaskResult> results, const std::string& config_hash,
                            std::uint64_t seed) {
    std::vector<Ablation> ab;
    for (const auto& r : results) ab.push_back(ablation(r));

    std::string md = "# Ensemble ablation\n\n";
    md += "<!-- vibemil config_hash=" + config_hash + " seed=" + std::to_string(seed) + " -->\n\n";
    md += "Pooled out-of-fold AUC per configuration.\n\n| Configuration |";
    for (const auto& r : results) md += " " + std::string(r.task == validation::Task::PVH ? "PVH" : "NPVH") + " |";
    md += "\n|---|";
    for (std::size_t i = 0; i < results.size(); ++i) md += "---:|";
    md += "\n";
    const auto row = [&](const std::string& name, auto get, bool signed_value = false) {
        md += "| " + name + " |";
        for (const auto& a : ab) {
            const double v = get(a);
            md += " " + std::string(signed_value && v >= 0.0 ? "+" : "") + format_fixed(v, 3) + " |";
        }
        md += "\n";
    };
    row("GBT level-wise only", [](const Ablation& a) { return a.single.gbt_level; });
    row("GBT leaf-wise only", [](const Ablation& a) { return a.single.gbt_leaf; });
    row("CNN-MIL only", [](const Ablation& a) { return a.single.cnn; });
    row("Level + Leaf (equal)", [](const Ablation& a) { return a.level_leaf; });
    row("Level + CNN-MIL (equal)", [](const Ablation& a) { return a.level_cnn; });
    row("Leaf + CNN-MIL (equal)", [](const Ablation& a) { return a.leaf_cnn; });
    row("Full ensemble (opt.)", [](const Ablation& a) { return a.ensemble; });
    row("Δ vs best single", [](const Ablation& a) { return a.delta; }, true);

    md += "\nOptimized weights (CNN-MIL, GBT level-wise, GBT leaf-wise):\n\n";
    for (const auto& r : results) {
        md += "- " + std::string(r.task == validation::Task::PVH ? "PVH" : "NPVH") + ": " +
              format_fixed(r.weights.w_cnn(), 2) + ", " + format_fixed(r.weights.w_gbt_level(), 2) + ", " +
              format_fixed(r.weights.w_gbt_leaf(), 2) + " (" + std::to_string(r.oof.rows.size()) + " subjects)\n";
    }
    return md;
}

}  // namespace vibemil::pipeline
