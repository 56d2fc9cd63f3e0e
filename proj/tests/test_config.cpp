#include <doctest.h>

#include <cstdio>

#include "vibemil/config.hpp"
#include "vibemil/error.hpp"

using namespace vibemil;

namespace {

const char* kMinimal = R"(
[paths]
data_dir = "data"
artifact_dir = "out"
)";

std::string fnv1a_hex(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ErrorCode code_of(const std::string& toml) {
    try {
        parse_config_toml(toml, "/base");
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error for:\n" << toml);
    return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("minimal config takes defaults and resolves paths against the file directory") {
    const auto cfg = parse_config_toml(kMinimal, "/base/dir");
    CHECK(cfg.data_dir == std::filesystem::path("/base/dir/data"));
    CHECK(cfg.artifact_dir == std::filesystem::path("/base/dir/out"));
    CHECK(cfg.seed == 42);
    CHECK(cfg.k == 5);
    CHECK(cfg.task == validation::Task::PVH);
    CHECK(cfg.gbt_level.growth == gbt::Growth::LevelWise);
    CHECK(cfg.gbt_leaf.growth == gbt::Growth::LeafWise);
    CHECK(cfg.windowing.window == 200);
    CHECK(cfg.windowing.hop == 100);
    CHECK(cfg.ensemble_step == 0.05);
    CHECK_FALSE(cfg.synth.has_value());
    const auto abs = parse_config_toml("[paths]\ndata_dir = \"/d\"\nartifact_dir = \"/a\"\n", "/base");
    CHECK(abs.data_dir == std::filesystem::path("/d"));
}

TEST_CASE("every section is read") {
    const auto cfg = parse_config_toml(std::string(kMinimal) + R"(
[run]
task = "npvh"
seed = 7
threads = 2
k = 4
holdout_fraction = 0.2
[featurize]
window = 50
hop = 25
scaler_fraction = 0.5
[gbt_level]
n_estimators = 30
max_depth = 3
[gbt_leaf]
max_leaves = 9
learning_rate = 0.1
[mil]
epochs = 4
lr = 0.002
[ensemble]
step = 0.1
[synth]
n_pos = 3
n_neg = 4
burst_targets = [1]
)", "/b");
    CHECK(cfg.task == validation::Task::NPVH);
    CHECK(cfg.seed == 7);
    CHECK(cfg.threads == 2);
    CHECK(cfg.k == 4);
    CHECK(cfg.holdout_fraction == 0.2);
    CHECK(cfg.windowing.window == 50);
    CHECK(cfg.scaler_fraction == 0.5);
    CHECK(cfg.gbt_level.n_estimators == 30);
    CHECK(cfg.gbt_level.max_depth == 3);
    CHECK(cfg.gbt_leaf.max_leaves == 9);
    CHECK(cfg.gbt_leaf.learning_rate == 0.1);
    CHECK(cfg.mil.epochs == 4);
    CHECK(cfg.ensemble_step == 0.1);
    REQUIRE(cfg.synth.has_value());
    CHECK(cfg.synth->n_neg == 4);
    CHECK(cfg.synth->burst_targets == std::vector<int>{1});
}

TEST_CASE("malformed and out-of-range configs are config errors") {
    const std::string m = kMinimal;
    CHECK(code_of("[paths]\ndata_dir = \"d\"\n") == ErrorCode::ConfigError);
    CHECK(code_of("not toml = = 3") == ErrorCode::ConfigError);
    CHECK(code_of(m + "[bogus]\nx = 1\n") == ErrorCode::ConfigError);
    CHECK(code_of(m + "[run]\nseeds = 1\n") == ErrorCode::ConfigError);
    CHECK(code_of(m + "[run]\nseed = \"one\"\n") == ErrorCode::ConfigError);
    CHECK(code_of(m + "[run]\nseed = -1\n") == ErrorCode::ConfigError);
    CHECK(code_of(m + "[run]\ntask = \"copd\"\n") == ErrorCode::ConfigError);
    CHECK(code_of(m + "[run]\nk = 1\n") == ErrorCode::ConfigError);
    CHECK(code_of(m + "[gbt_level]\nmax_leaves = 4\n") == ErrorCode::ConfigError);
    CHECK(code_of(m + "[gbt_leaf]\nrow_subsample = 0.0\n") == ErrorCode::ConfigError);
    CHECK(code_of(m + "[mil]\ndropout_mlp = 1.0\n") == ErrorCode::ConfigError);
    CHECK(code_of(m + "[ensemble]\nstep = 0.3\n") == ErrorCode::ConfigError);
    CHECK(code_of(m + "[synth]\nn_pos = 0\n") == ErrorCode::ConfigError);
    CHECK(code_of(m + "[synth]\nwhatever = 0\n") == ErrorCode::ConfigError);
    try {
        load_config("/nonexistent/vibemil.toml");
        FAIL("expected ConfigError");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ConfigError);
    }
}

TEST_CASE("config hash is FNV-1a over the canonical json") {
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
    const auto cfg = parse_config_toml(kMinimal, "/x");
    CHECK(config_hash(cfg) == fnv1a_hex(canonical_config_json(cfg)));
    CHECK(config_hash(cfg).size() == 16);
}

TEST_CASE("hash ignores task, threads and paths but tracks model settings") {
    const auto base = config_hash(parse_config_toml(kMinimal, "/x"));
    CHECK(config_hash(parse_config_toml(kMinimal, "/elsewhere")) == base);
    const std::string m = kMinimal;
    CHECK(config_hash(parse_config_toml(m + "[run]\ntask = \"npvh\"\nthreads = 3\n", "/x")) == base);
    CHECK(config_hash(parse_config_toml(m + "[run]\nseed = 43\n", "/x")) != base);
    CHECK(config_hash(parse_config_toml(m + "[mil]\nepochs = 99\n", "/x")) != base);
    CHECK(config_hash(parse_config_toml(m + "[gbt_leaf]\nmax_leaves = 30\n", "/x")) != base);
    CHECK(config_hash(parse_config_toml(m + "[featurize]\nhop = 50\n", "/x")) != base);
}
