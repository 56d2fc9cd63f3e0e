#include "vibemil/config.hpp"

#include <cstdio>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "vibemil/error.hpp"

namespace vibemil {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& msg) { fail(ErrorCode::ConfigError, msg); }

// Reads keys from one TOML section (already converted to JSON) and rejects leftovers.
class Section {
public:
    Section(const json& root, std::string name) : name_(std::move(name)) {
        if (root.contains(name_)) {
            if (!root[name_].is_object()) config_error("[" + name_ + "] must be a table");
            table_ = root[name_];
        } else {
            table_ = json::object();
        }
    }

    template <typename T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!table_.contains(key)) return;
        const auto& v = table_[key];
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw std::invalid_argument("expected a number");
                out = v.get<double>();
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
                if constexpr (std::is_unsigned_v<T>) {
                    if (v.get<long long>() < 0) throw std::invalid_argument("expected a non-negative integer");
                }
                out = v.get<T>();
            } else {
                if (!v.is_string()) throw std::invalid_argument("expected a string");
                out = v.get<std::string>();
            }
        } catch (const std::exception& e) {
            config_error("[" + name_ + "] " + key + ": " + e.what());
        }
    }

    void finish() const {
        for (const auto& [key, _] : table_.items())
            if (!seen_.count(key)) config_error("unknown key [" + name_ + "] " + key);
    }

private:
    std::string name_;
    json table_;
    std::set<std::string> seen_;
};

void read_gbt(const json& root, const char* name, gbt::GbtConfig& c, bool leaf) {
    Section s(root, name);
    s.read("n_estimators", c.n_estimators);
    s.read("max_depth", c.max_depth);
    s.read("learning_rate", c.learning_rate);
    s.read("row_subsample", c.row_subsample);
    s.read("col_subsample", c.col_subsample);
    s.read("l1_alpha", c.l1_alpha);
    s.read("l2_lambda", c.l2_lambda);
    s.read("early_stop_patience", c.early_stop_patience);
    s.read("n_bins", c.n_bins);
    s.read("min_child_weight", c.min_child_weight);
    if (leaf) s.read("max_leaves", c.max_leaves);
    s.finish();
}

json gbt_json(const gbt::GbtConfig& c) {
    return {{"n_estimators", c.n_estimators},       {"max_depth", c.max_depth},
            {"learning_rate", c.learning_rate},     {"row_subsample", c.row_subsample},
            {"col_subsample", c.col_subsample},     {"l1_alpha", c.l1_alpha},
            {"l2_lambda", c.l2_lambda},             {"early_stop_patience", c.early_stop_patience},
            {"growth", std::string(gbt::to_string(c.growth))}, {"max_leaves", c.max_leaves},
            {"n_bins", c.n_bins},                   {"min_child_weight", c.min_child_weight}};
}

json mil_json(const mil::MilConfig& c) {
    return {{"dropout_block12", c.dropout_block12}, {"dropout_block3", c.dropout_block3},
            {"dropout_mlp", c.dropout_mlp},         {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},           {"adam_eps", c.adam_eps},
            {"lr", c.lr},                           {"epochs", c.epochs},
            {"patience", c.patience},               {"grad_clip_norm", c.grad_clip_norm},
            {"gn_eps", c.gn_eps}};
}

std::filesystem::path resolve(const std::string& p, const std::filesystem::path& base) {
    std::filesystem::path path(p);
    if (path.is_relative() && !base.empty()) path = base / path;
    return path.lexically_normal();
}

}  // namespace

RunConfig::RunConfig() { gbt_leaf.growth = gbt::Growth::LeafWise; }

void RunConfig::validate() const {
    if (k < 2) config_error("k must be at least 2");
    if (threads < 1) config_error("threads must be at least 1");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) config_error("holdout_fraction must be in (0, 1)");
    if (windowing.window < 1 || windowing.hop < 1) config_error("window and hop must be positive");
    if (!(scaler_fraction > 0.0 && scaler_fraction <= 1.0)) config_error("scaler_fraction must be in (0, 1]");
    if (gbt_level.growth != gbt::Growth::LevelWise || gbt_leaf.growth != gbt::Growth::LeafWise)
        config_error("gbt_level must grow level-wise and gbt_leaf leaf-wise");
    try {
        gbt_level.validate();
        gbt_leaf.validate();
        mil.validate();
        if (synth) synth->validate();
    } catch (const Error& e) {
        config_error(e.what());
    }
    const double units = 1.0 / ensemble_step;
    if (!(ensemble_step > 0.0 && ensemble_step <= 1.0) || std::abs(units - std::round(units)) > 1e-9)
        config_error("ensemble step must divide 1 exactly");
}

RunConfig parse_config_toml(std::string_view text, const std::filesystem::path& base_dir) {
    toml::table tbl;
    try {
        tbl = toml::parse(text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "TOML parse error at line " << e.source().begin.line << ": " << e.description();
        config_error(msg.str());
    }
    std::ostringstream js;
    js << toml::json_formatter{tbl};
    const json root = json::parse(js.str());

    static const std::set<std::string> sections = {"run", "paths", "featurize", "gbt_level", "gbt_leaf",
                                                   "mil", "ensemble", "synth"};
    for (const auto& [name, _] : root.items())
        if (!sections.count(name)) config_error("unknown section [" + name + "]");

    RunConfig cfg;
    {
        Section s(root, "run");
        std::string task = std::string(validation::to_string(cfg.task));
        s.read("task", task);
        try {
            cfg.task = validation::parse_task(task);
        } catch (const Error& e) {
            config_error(e.what());
        }
        s.read("seed", cfg.seed);
        s.read("threads", cfg.threads);
        s.read("k", cfg.k);
        s.read("holdout_fraction", cfg.holdout_fraction);
        s.finish();
    }
    {
        Section s(root, "paths");
        std::string data, artifacts;
        s.read("data_dir", data);
        s.read("artifact_dir", artifacts);
        s.finish();
        if (data.empty()) config_error("[paths] data_dir is required");
        if (artifacts.empty()) config_error("[paths] artifact_dir is required");
        cfg.data_dir = resolve(data, base_dir);
        cfg.artifact_dir = resolve(artifacts, base_dir);
    }
    {
        Section s(root, "featurize");
        s.read("window", cfg.windowing.window);
        s.read("hop", cfg.windowing.hop);
        s.read("scaler_fraction", cfg.scaler_fraction);
        s.finish();
    }
    read_gbt(root, "gbt_level", cfg.gbt_level, false);
    read_gbt(root, "gbt_leaf", cfg.gbt_leaf, true);
    {
        Section s(root, "mil");
        auto& m = cfg.mil;
        s.read("dropout_block12", m.dropout_block12);
        s.read("dropout_block3", m.dropout_block3);
        s.read("dropout_mlp", m.dropout_mlp);
        s.read("adam_beta1", m.adam_beta1);
        s.read("adam_beta2", m.adam_beta2);
        s.read("adam_eps", m.adam_eps);
        s.read("lr", m.lr);
        s.read("epochs", m.epochs);
        s.read("patience", m.patience);
        s.read("grad_clip_norm", m.grad_clip_norm);
        s.read("gn_eps", m.gn_eps);
        s.finish();
    }
    {
        Section s(root, "ensemble");
        s.read("step", cfg.ensemble_step);
        s.finish();
    }
    if (root.contains("synth")) {
        const auto known = json::parse(synth::spec_to_json(synth::SynthSpec{}));
        for (const auto& [key, _] : root["synth"].items())
            if (!known.contains(key)) config_error("unknown key [synth] " + key);
        try {
            cfg.synth = synth::spec_from_json(root["synth"].dump());
        } catch (const std::exception& e) {
            config_error(std::string("[synth] ") + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = ingest::read_text_file(path);
    } catch (const Error& e) {
        config_error("cannot read config " + path.string());
    }
    return parse_config_toml(text, path.parent_path());
}

std::string canonical_config_json(const RunConfig& cfg) {
    json j{{"seed", cfg.seed},
           {"k", cfg.k},
           {"holdout_fraction", cfg.holdout_fraction},
           {"window", cfg.windowing.window},
           {"hop", cfg.windowing.hop},
           {"scaler_fraction", cfg.scaler_fraction},
           {"gbt_level", gbt_json(cfg.gbt_level)},
           {"gbt_leaf", gbt_json(cfg.gbt_leaf)},
           {"mil", mil_json(cfg.mil)},
           {"ensemble_step", cfg.ensemble_step}};
    return j.dump();
}

std::string config_hash(const RunConfig& cfg) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical_config_json(cfg)) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace vibemil
