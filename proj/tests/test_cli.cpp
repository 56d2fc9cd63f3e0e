#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path& scratch() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "vibemil_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

int vibemil(const std::string& args) {
    const std::string cmd = std::string(VIBEMIL_CLI_PATH) + " " + args + " >>" + (scratch() / "log.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

std::string tiny_toml(const std::string& data, const std::string& artifacts, int synth_seed = 5) {
    return "[run]\nseed = 11\nk = 3\nholdout_fraction = 0.25\n"
           "[paths]\ndata_dir = \"" + data + "\"\nartifact_dir = \"" + artifacts + "\"\n"
           "[featurize]\nwindow = 50\nhop = 25\n"
           "[gbt_level]\nn_estimators = 10\nmin_child_weight = 0.1\n"
           "[gbt_leaf]\nn_estimators = 10\nmin_child_weight = 0.1\n"
           "[mil]\nepochs = 2\npatience = 2\n"
           "[synth]\nn_pos = 6\nn_neg = 6\ndays_min = 1\ndays_max = 2\nframes_min = 1000\nframes_max = 1400\n"
           "burst_min_frames = 200\nburst_max_frames = 300\nburst_slot_frames = 700\nseed = " +
           std::to_string(synth_seed) + "\n";
}

}  // namespace

TEST_CASE("usage and configuration errors exit with 2") {
    CHECK(vibemil("") == 2);
    CHECK(vibemil("frobnicate --config x.toml") == 2);
    CHECK(vibemil("featurize") == 2);
    CHECK(vibemil("featurize --config " + (scratch() / "missing.toml").string()) == 2);
    write(scratch() / "bad.toml", tiny_toml("d", "a") + "[run]\n");  // duplicate table
    CHECK(vibemil("featurize --config " + (scratch() / "bad.toml").string()) == 2);
    write(scratch() / "unknown.toml", tiny_toml("d", "a") + "[ensemble]\nstepp = 0.1\n");
    CHECK(vibemil("featurize --config " + (scratch() / "unknown.toml").string()) == 2);
    write(scratch() / "ok.toml", tiny_toml("d", "a"));
    CHECK(vibemil("split --config " + (scratch() / "ok.toml").string() + " --task copd") == 2);
}

TEST_CASE("steps run before their inputs exist exit with 3") {
    write(scratch() / "empty" / "cfg.toml", tiny_toml("data", "art"));
    const auto cfg = (scratch() / "empty" / "cfg.toml").string();
    CHECK(vibemil("featurize --config " + cfg) == 3);
    CHECK(vibemil("train --model gbt-level --config " + cfg) == 3);
    CHECK(vibemil("ensemble --config " + cfg) == 3);
    CHECK(vibemil("report --config " + cfg) == 3);
}

TEST_CASE("a malformed day file is a data contract violation") {
    const auto dir = scratch() / "corrupt";
    write(dir / "cfg.toml", tiny_toml("data", "art"));
    const auto cfg = (dir / "cfg.toml").string();
    REQUIRE(vibemil("synth --config " + cfg) == 0);
    fs::path victim;
    for (const auto& e : fs::directory_iterator(dir / "data" / "days")) victim = e.path();
    REQUIRE_FALSE(victim.empty());
    auto text = slurp(victim);
    text += "{\"v\":[1,2,3],\"voiced\":true}\n";
    write(victim, text);
    CHECK(vibemil("featurize --config " + cfg) == 4);
}

TEST_CASE("full pipeline writes provenance-stamped artifacts and a complete report") {
    const auto dir = scratch() / "full";
    write(dir / "cfg.toml", tiny_toml("data", "art"));
    write(dir / "holdout.toml", tiny_toml("held", "unused", 77));
    const auto cfg = (dir / "cfg.toml").string();
    REQUIRE(vibemil("synth --config " + cfg) == 0);
    REQUIRE(vibemil("synth --config " + (dir / "holdout.toml").string()) == 0);
    REQUIRE(vibemil("run --config " + cfg) == 0);

    const auto art = dir / "art";
    for (const char* f : {"pvh/folds.csv", "pvh/gbt-level/oof.csv", "pvh/gbt-leaf/oof.csv", "pvh/mil/oof.csv",
                          "pvh/mil/fold0.ckpt", "pvh/mil/scaler_fold0.json", "pvh/gbt-level/fold2.json",
                          "pvh/ensemble/weights.json", "pvh/ensemble/oof_table.csv", "report.md"})
        CHECK_MESSAGE(fs::exists(art / f), f);
    CHECK(slurp(art / "pvh" / "gbt-leaf" / "oof.csv").rfind("# vibemil config_hash=", 0) == 0);

    const auto weights = nlohmann::json::parse(slurp(art / "pvh" / "ensemble" / "weights.json"));
    CHECK(weights["units"]["denominator"] == 20);
    const double best_single = std::max({weights["single_oof_auc"]["cnn"].get<double>(),
                                         weights["single_oof_auc"]["gbt_level"].get<double>(),
                                         weights["single_oof_auc"]["gbt_leaf"].get<double>()});
    CHECK(weights["oof_auc"].get<double>() >= best_single);

    const auto report = slurp(art / "report.md");
    for (const char* row : {"GBT level-wise only", "GBT leaf-wise only", "CNN-MIL only", "Level + Leaf (equal)",
                            "Level + CNN-MIL (equal)", "Leaf + CNN-MIL (equal)", "Full ensemble (opt.)",
                            "Δ vs best single"})
        CHECK_MESSAGE(report.find(row) != std::string::npos, row);
    CHECK(report.find("| Δ vs best single | +") != std::string::npos);

    CHECK(vibemil("evaluate --config " + cfg + " --holdout " + (dir / "held").string()) == 0);
    const auto metrics = nlohmann::json::parse(slurp(art / "pvh" / "evaluate" / "metrics.json"));
    CHECK(metrics["n_subjects"] == 12);
    CHECK(slurp(art / "pvh" / "evaluate" / "predictions.csv").find("subject_id,p_final,label") != std::string::npos);

    // A different seed no longer matches the stored features.
    CHECK(vibemil("train --model gbt-leaf --seed 12 --config " + cfg) == 3);
    // The other task reuses the features but has no folds yet.
    CHECK(vibemil("train --model gbt-leaf --task npvh --config " + cfg) == 3);
    // The synthetic cohort has no NPVH subjects, so the NPVH folds cannot be built.
    CHECK(vibemil("split --task npvh --config " + cfg) == 4);
}
