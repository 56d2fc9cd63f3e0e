#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "vibemil/artifacts.hpp"
#include "vibemil/config.hpp"
#include "vibemil/ensemble.hpp"
#include "vibemil/error.hpp"
#include "vibemil/format.hpp"
#include "vibemil/pipeline.hpp"

namespace fs = std::filesystem;
using namespace vibemil;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDependency = 3;
constexpr int kExitData = 4;

struct Options {
    std::string config;
    std::string task;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string model;
    std::string holdout;
};

struct Context {
    RunConfig cfg;
    artifacts::Provenance prov;
    artifacts::Layout layout;
};

void log_line(const std::string& msg) { std::cerr << msg << "\n"; }

Context load(const Options& o) {
    Context c;
    c.cfg = load_config(o.config);
    if (!o.task.empty()) c.cfg.task = validation::parse_task(o.task);
    if (o.seed) c.cfg.seed = *o.seed;
    if (o.threads) c.cfg.threads = *o.threads;
    c.cfg.validate();
    c.prov = {config_hash(c.cfg), c.cfg.seed};
    c.layout.root = c.cfg.artifact_dir;
    return c;
}

void write(const fs::path& path, std::string_view text) {
    fs::create_directories(path.parent_path());
    ingest::write_text_file(path, text);
}

std::vector<validation::LabeledSubject> task_pool(const pipeline::FeatureSet& fs, validation::Task task) {
    return pipeline::task_subjects(fs, validation::make_task(task));
}

validation::FoldAssignment load_folds(const Context& c, const std::vector<validation::LabeledSubject>& subjects) {
    const auto text = artifacts::read_checked(c.layout.folds_csv(c.cfg.task), c.prov,
                                              "split --task " + std::string(validation::to_string(c.cfg.task)));
    auto folds = validation::parse_fold_assignment_csv(text, c.cfg.k);
    if (folds.fold_of.size() != subjects.size())
        fail(ErrorCode::SchemaError, "fold assignment does not cover the task's subjects");
    for (const auto& s : subjects)
        if (!folds.fold_of.count(s.subject_id))
            fail(ErrorCode::SchemaError, "subject " + s.subject_id + " has no fold");
    return folds;
}

std::string train_producer(const Context& c, pipeline::ModelKind m) {
    return "train --task " + std::string(validation::to_string(c.cfg.task)) + " --model " +
           std::string(pipeline::to_string(m));
}

fs::path fold_file(const fs::path& dir, const char* stem, int f, const char* ext) {
    return dir / (std::string(stem) + std::to_string(f) + ext);
}

int cmd_synth(const Context& c) {
    if (!c.cfg.synth) fail(ErrorCode::ConfigError, "the config has no [synth] section");
    synth::generate_cohort(*c.cfg.synth, c.cfg.data_dir);
    std::cout << "wrote " << (c.cfg.synth->n_pos + c.cfg.synth->n_neg) << " subjects to " << c.cfg.data_dir.string()
              << "\n";
    return kExitOk;
}

int cmd_featurize(const Context& c) {
    if (!fs::is_directory(c.cfg.data_dir))
        fail(ErrorCode::DependencyError, "data_dir " + c.cfg.data_dir.string() +
                                              " does not exist; run `vibemil synth` or point [paths] data_dir at a cohort");
    const auto set = pipeline::featurize_dir(c.cfg.data_dir, c.cfg.windowing, c.cfg.threads);
    for (const auto& w : set.warnings) log_line("warning: " + w);
    artifacts::write_features(c.layout.features_dir(), set, c.prov);
    std::cout << "featurized " << set.subjects.size() << " subjects\n";
    return kExitOk;
}

int cmd_split(const Context& c) {
    const auto set = artifacts::read_features(c.layout.features_dir(), c.prov);
    const auto subjects = task_pool(set, c.cfg.task);
    const auto folds = pipeline::make_folds(subjects, c.cfg.k, c.cfg.seed);
    write(c.layout.folds_csv(c.cfg.task), artifacts::comment_line(c.prov) + validation::fold_assignment_csv(folds));
    std::cout << "split " << subjects.size() << " subjects into " << folds.k << " folds\n";
    return kExitOk;
}

int cmd_train(const Context& c, pipeline::ModelKind kind) {
    const auto set = artifacts::read_features(c.layout.features_dir(), c.prov);
    const auto subjects = task_pool(set, c.cfg.task);
    const auto folds = load_folds(c, subjects);
    const auto dir = c.layout.model_dir(c.cfg.task, kind);
    fs::create_directories(dir);
    const auto prov_json = [&](int f) {
        json j = json::parse(artifacts::provenance_json(c.prov));
        j["fold"] = f;
        j["task"] = std::string(validation::to_string(c.cfg.task));
        return j;
    };

    std::vector<pipeline::OofPrediction> oof;
    if (kind == pipeline::ModelKind::Mil) {
        const auto cv = pipeline::cross_validate_mil(set, subjects, folds, c.cfg, log_line);
        for (int f = 0; f < folds.k; ++f) {
            const auto& fold = cv.folds[static_cast<std::size_t>(f)];
            json extra{{"provenance", prov_json(f)}};
            write(fold_file(dir, "fold", f, ".ckpt"), mil::checkpoint_bytes(fold.model, extra.dump()));
            write(fold_file(dir, "scaler_fold", f, ".json"), artifacts::scaler_json(fold.scaler, c.prov));
            write(fold_file(dir, "train_log_fold", f, ".csv"),
                  artifacts::comment_line(c.prov) + mil::training_log_csv(fold.model));
            const auto ids = folds.subjects_in(f);
            write(fold_file(dir, "attention_fold", f, ".json"),
                  artifacts::attention_json(fold.model, set, ids, fold.scaler, c.prov));
        }
        oof = cv.oof;
    } else {
        const auto cv = pipeline::cross_validate_gbt(set, subjects, folds, c.cfg, kind, log_line);
        for (int f = 0; f < folds.k; ++f) {
            const auto& model = cv.models[static_cast<std::size_t>(f)];
            json j = json::parse(gbt::model_to_json(model));
            j["config_hash"] = c.prov.config_hash;
            j["seed"] = c.prov.seed;
            j["fold"] = f;
            write(fold_file(dir, "fold", f, ".json"), j.dump() + "\n");
            write(fold_file(dir, "train_log_fold", f, ".csv"),
                  artifacts::comment_line(c.prov) + gbt::training_log_csv(model));
        }
        oof = cv.oof;
    }
    write(c.layout.oof_csv(c.cfg.task, kind), artifacts::oof_predictions_csv(oof, c.prov));
    std::vector<double> p;
    std::vector<int> y;
    for (const auto& r : oof) {
        p.push_back(r.p);
        y.push_back(r.y);
    }
    std::cout << pipeline::to_string(kind) << " pooled OOF AUC " << format_fixed(validation::roc_auc(p, y), 4) << "\n";
    return kExitOk;
}

std::vector<pipeline::OofPrediction> load_oof(const Context& c, pipeline::ModelKind m) {
    return artifacts::parse_oof_predictions_csv(
        artifacts::read_checked(c.layout.oof_csv(c.cfg.task, m), c.prov, train_producer(c, m)));
}

int cmd_ensemble(const Context& c) {
    const auto set = artifacts::read_features(c.layout.features_dir(), c.prov);
    const auto subjects = task_pool(set, c.cfg.task);
    const auto folds = load_folds(c, subjects);
    const auto table = pipeline::combine_oof(load_oof(c, pipeline::ModelKind::Mil),
                                             load_oof(c, pipeline::ModelKind::GbtLevel),
                                             load_oof(c, pipeline::ModelKind::GbtLeaf), folds, subjects);
    const auto w = pipeline::fit_ensemble(table, c.cfg.ensemble_step);
    const auto single = pipeline::single_model_aucs(table);
    const auto dir = c.layout.ensemble_dir(c.cfg.task);
    write(dir / "oof_table.csv", artifacts::comment_line(c.prov) + validation::oof_table_csv(table));
    json extra{{"config_hash", c.prov.config_hash},
               {"seed", c.prov.seed},
               {"task", std::string(validation::to_string(c.cfg.task))},
               {"single_oof_auc", {{"cnn", single.cnn}, {"gbt_level", single.gbt_level}, {"gbt_leaf", single.gbt_leaf}}}};
    write(dir / "weights.json", ensemble::weights_json(w, extra.dump()));
    std::cout << "weights (cnn, gbt_level, gbt_leaf) = (" << format_fixed(w.w_cnn(), 2) << ", "
              << format_fixed(w.w_gbt_level(), 2) << ", " << format_fixed(w.w_gbt_leaf(), 2) << "), pooled OOF AUC "
              << format_fixed(w.achieved_oof_auc, 4) << "\n";
    return kExitOk;
}

int cmd_evaluate(const Context& c, const std::string& holdout) {
    if (holdout.empty()) fail(ErrorCode::ConfigError, "evaluate needs --holdout <cohort dir>");
    if (!fs::is_directory(holdout)) fail(ErrorCode::ConfigError, "holdout dir " + holdout + " does not exist");
    const auto weights = ensemble::parse_weights_json(
        artifacts::read_checked_json(c.layout.ensemble_dir(c.cfg.task) / "weights.json", c.prov,
                                     "ensemble --task " + std::string(validation::to_string(c.cfg.task))));

    std::vector<gbt::GbtModel> level, leaf;
    std::vector<mil::MilModel> nets;
    std::vector<features::ScalerParams> scalers;
    for (int f = 0; f < c.cfg.k; ++f) {
        const auto level_dir = c.layout.model_dir(c.cfg.task, pipeline::ModelKind::GbtLevel);
        const auto leaf_dir = c.layout.model_dir(c.cfg.task, pipeline::ModelKind::GbtLeaf);
        const auto mil_dir = c.layout.model_dir(c.cfg.task, pipeline::ModelKind::Mil);
        level.push_back(gbt::model_from_json(artifacts::read_checked_json(
            fold_file(level_dir, "fold", f, ".json"), c.prov, train_producer(c, pipeline::ModelKind::GbtLevel))));
        leaf.push_back(gbt::model_from_json(artifacts::read_checked_json(
            fold_file(leaf_dir, "fold", f, ".json"), c.prov, train_producer(c, pipeline::ModelKind::GbtLeaf))));
        nets.push_back(mil::parse_checkpoint(artifacts::read_checked_checkpoint(
            fold_file(mil_dir, "fold", f, ".ckpt"), c.prov, train_producer(c, pipeline::ModelKind::Mil))));
        scalers.push_back(artifacts::parse_scaler_json(artifacts::read_checked_json(
            fold_file(mil_dir, "scaler_fold", f, ".json"), c.prov, train_producer(c, pipeline::ModelKind::Mil))));
    }

    const auto set = pipeline::featurize_dir(holdout, c.cfg.windowing, c.cfg.threads);
    for (const auto& w : set.warnings) log_line("warning: " + w);
    const auto subjects = task_pool(set, c.cfg.task);
    std::vector<std::string> ids;
    std::vector<int> y;
    for (const auto& s : subjects) {
        ids.push_back(s.subject_id);
        y.push_back(s.y);
    }
    const auto X = pipeline::subject_matrix(set, subjects);
    std::vector<ensemble::FoldProbabilities> per_fold(static_cast<std::size_t>(c.cfg.k));
    for (int f = 0; f < c.cfg.k; ++f) {
        auto& fp = per_fold[static_cast<std::size_t>(f)];
        fp.p_gbt_level = gbt::predict_gbt(level[static_cast<std::size_t>(f)], X);
        fp.p_gbt_leaf = gbt::predict_gbt(leaf[static_cast<std::size_t>(f)], X);
        for (const auto& id : ids)
            fp.p_cnn.push_back(mil::predict_subject(nets[static_cast<std::size_t>(f)],
                                                    pipeline::mil_inputs(set.at(id), scalers[static_cast<std::size_t>(f)])));
    }
    const auto preds = ensemble::apply_test(per_fold, ids, weights, c.cfg.k);

    std::vector<double> p_final, p_cnn, p_level, p_leaf;
    int correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        p_final.push_back(preds[i].p_final);
        p_cnn.push_back(preds[i].p_cnn);
        p_level.push_back(preds[i].p_gbt_level);
        p_leaf.push_back(preds[i].p_gbt_leaf);
        correct += preds[i].label == y[i];
    }
    const auto auc_or_null = [&](const std::vector<double>& p) -> json {
        const bool both = std::count(y.begin(), y.end(), 1) > 0 && std::count(y.begin(), y.end(), 0) > 0;
        return both ? json(validation::roc_auc(p, y)) : json(nullptr);
    };
    json metrics{{"config_hash", c.prov.config_hash},
                 {"seed", c.prov.seed},
                 {"task", std::string(validation::to_string(c.cfg.task))},
                 {"n_subjects", preds.size()},
                 {"auc", auc_or_null(p_final)},
                 {"accuracy", preds.empty() ? json(nullptr) : json(static_cast<double>(correct) / preds.size())},
                 {"threshold", 0.5},
                 {"single_auc", {{"cnn", auc_or_null(p_cnn)}, {"gbt_level", auc_or_null(p_level)},
                                 {"gbt_leaf", auc_or_null(p_leaf)}}}};
    const auto dir = c.layout.evaluate_dir(c.cfg.task);
    write(dir / "predictions.csv", artifacts::comment_line(c.prov) + ensemble::predictions_csv(preds));
    write(dir / "metrics.json", metrics.dump(2) + "\n");
    std::cout << "evaluated " << preds.size() << " subjects, AUC " << metrics["auc"].dump() << ", accuracy "
              << metrics["accuracy"].dump() << "\n";
    return kExitOk;
}

std::optional<pipeline::TaskResult> load_result(const Context& c, validation::Task task, bool required) {
    const auto dir = c.layout.ensemble_dir(task);
    const std::string producer = "ensemble --task " + std::string(validation::to_string(task));
    if (!required && !fs::exists(dir / "weights.json")) return std::nullopt;
    pipeline::TaskResult r;
    r.task = task;
    try {
        r.weights = ensemble::parse_weights_json(artifacts::read_checked_json(dir / "weights.json", c.prov, producer));
        r.oof = validation::parse_oof_table_csv(artifacts::read_checked(dir / "oof_table.csv", c.prov, producer));
    } catch (const Error& e) {
        if (required || e.code() != ErrorCode::DependencyError) throw;
        log_line("note: skipping " + std::string(validation::to_string(task)) + ": " + e.what());
        return std::nullopt;
    }
    return r;
}

int cmd_report(const Context& c) {
    std::vector<pipeline::TaskResult> results;
    for (auto task : {validation::Task::PVH, validation::Task::NPVH})
        if (auto r = load_result(c, task, task == c.cfg.task)) results.push_back(std::move(*r));
    const auto md = pipeline::ablation_report(results, c.prov.config_hash, c.prov.seed);
    write(c.layout.report_md(), md);
    std::cout << md;
    return kExitOk;
}

int cmd_run(const Context& c) {
    cmd_featurize(c);
    cmd_split(c);
    for (auto m : {pipeline::ModelKind::GbtLevel, pipeline::ModelKind::GbtLeaf, pipeline::ModelKind::Mil})
        cmd_train(c, m);
    cmd_ensemble(c);
    return cmd_report(c);
}

int exit_code(ErrorCode code) {
    switch (code) {
        case ErrorCode::ConfigError: return kExitConfig;
        case ErrorCode::DependencyError: return kExitDependency;
        default: return kExitData;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Vocal hyperfunction detection from ambulatory voice features"};
    app.require_subcommand(1);
    Options o;

    const auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "TOML run configuration")->required();
        sub->add_option("--task", o.task, "pvh or npvh (overrides [run] task)");
        sub->add_option("--seed", o.seed, "run seed (overrides [run] seed)");
        sub->add_option("--threads", o.threads, "worker cap");
        return sub;
    };
    auto* synth_cmd = common(app.add_subcommand("synth", "generate a synthetic cohort into data_dir"));
    auto* featurize = common(app.add_subcommand("featurize", "window bags and distributional vectors"));
    auto* split = common(app.add_subcommand("split", "stratified subject-grouped folds for the task"));
    auto* train = common(app.add_subcommand("train", "fold models and OOF predictions for one model type"));
    train->add_option("--model", o.model, "gbt-level, gbt-leaf or mil")->required();
    auto* ens = common(app.add_subcommand("ensemble", "grid-searched blend weights on pooled OOF"));
    auto* evaluate = common(app.add_subcommand("evaluate", "apply the fold models and weights to a holdout cohort"));
    evaluate->add_option("--holdout", o.holdout, "cohort directory with labels.csv and days/")->required();
    auto* report = common(app.add_subcommand("report", "markdown ablation table"));
    auto* run = common(app.add_subcommand("run", "featurize, split, train all models, ensemble and report"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        const auto c = load(o);
        if (synth_cmd->parsed()) return cmd_synth(c);
        if (featurize->parsed()) return cmd_featurize(c);
        if (split->parsed()) return cmd_split(c);
        if (train->parsed()) return cmd_train(c, pipeline::parse_model(o.model));
        if (ens->parsed()) return cmd_ensemble(c);
        if (evaluate->parsed()) return cmd_evaluate(c, o.holdout);
        if (report->parsed()) return cmd_report(c);
        if (run->parsed()) return cmd_run(c);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
