#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "consol/cli.hpp"
#include "consol/datasets.hpp"
#include "consol/errors.hpp"
#include "consol/run_config.hpp"

using namespace consol;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    auto d = fs::temp_directory_path() / ("consol_cli_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// short toy search: every episode ends the run because lambda covers all rewards
RunConfig quick_toy(const fs::path& dir) {
    RunConfig cfg;
    cfg.dataset.name = "toy";
    cfg.dataset.dir = dir.string();
    cfg.library = {"square", "cos"};
    cfg.mult_neurons = 1;
    cfg.qlearn.max_episodes = 3;
    cfg.qlearn.stop_lambda = 2.0;
    cfg.qlearn.polish_epochs = 20;
    cfg.qlearn.simplify = false;
    cfg.output_dir = (dir / "out").string();
    return cfg;
}

fs::path write_config(const fs::path& dir, const RunConfig& cfg) {
    const auto p = dir / "run.json";
    std::ofstream(p) << to_json(cfg).dump(2);
    return p;
}

}  // namespace

TEST_CASE("run config survives a JSON round trip") {
    RunConfig cfg;
    cfg.dataset.name = "pow";
    cfg.dataset.snr_db = 80.0;
    cfg.mult_neurons = 7;
    cfg.qlearn.gamma = 0.3;
    cfg.seeds.search = 42;
    const auto back = run_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
}

TEST_CASE("unknown config keys and versions are rejected") {
    auto j = to_json(RunConfig{});
    j["colour"] = "blue";
    CHECK_THROWS_AS(run_config_from_json(j), ConfigError);
    auto v = to_json(RunConfig{});
    v["version"] = 99;
    CHECK_THROWS_AS(run_config_from_json(v), ConfigError);

    const auto dir = scratch("badkey");
    std::ofstream(dir / "bad.json") << j.dump();
    const auto r = cli({"search", "--config", (dir / "bad.json").string()});
    CHECK(r.code == kExitConfig);
    fs::remove_all(dir);
}

TEST_CASE("usage errors exit with 2") {
    CHECK(cli({"gen-data", "bogus"}).code == kExitUsage);
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"probe", "sideways"}).code == kExitUsage);
    CHECK(cli({"probe", "sweep", "--grid", "3..1"}).code == kExitUsage);
}

TEST_CASE("gen-data writes both splits and records the SNR") {
    const auto dir = scratch("gen");
    auto r = cli({"gen-data", "syn1", "--out", dir.string()});
    REQUIRE(r.code == kExitOk);
    const auto train = load_dataset(dir, "syn1_train");
    CHECK(train.X.rows() == 2000);
    CHECK(load_dataset(dir, "syn1_test").X.rows() == 2000);
    CHECK_FALSE(train.meta.snr_db.has_value());

    r = cli({"gen-data", "syn1", "--out", dir.string(), "--snr", "100", "--n", "50"});
    REQUIRE(r.code == kExitOk);
    const auto noisy = load_dataset(dir, "syn1_train");
    CHECK(noisy.X.rows() == 50);
    REQUIRE(noisy.meta.snr_db.has_value());
    CHECK(*noisy.meta.snr_db == 100.0);
    fs::remove_all(dir);
}

TEST_CASE("search with a missing dataset names the path") {
    const auto dir = scratch("nodata");
    const auto cfg = quick_toy(dir);
    const auto r = cli({"search", "--config", write_config(dir, cfg).string()});
    CHECK(r.code == kExitConfig);
    CHECK(r.err.find("toy_train") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("search stops at episode one when lambda admits every reward and reruns are identical") {
    const auto dir = scratch("search");
    REQUIRE(cli({"gen-data", "toy", "--out", dir.string(), "--n", "200"}).code == kExitOk);
    const auto cfg_path = write_config(dir, quick_toy(dir));
    const auto a = cli({"search", "--config", cfg_path.string(), "--out", (dir / "a").string()});
    REQUIRE(a.code == kExitOk);
    const auto b = cli({"search", "--config", cfg_path.string(), "--out", (dir / "b").string()});
    REQUIRE(b.code == kExitOk);

    const auto report = nlohmann::json::parse(slurp(dir / "a" / "report.json"));
    CHECK(report["episodes_run"] == 1);
    CHECK(report["stopped_early"] == true);
    for (const char* key : {"schema", "dataset", "equations", "equations_text", "metrics", "best_reward",
                            "best_episode", "kept_neurons", "config"}) {
        CHECK_MESSAGE(report.contains(key), key);
    }
    CHECK(report["equations_text"].get<std::string>() == slurp(dir / "a" / "equations.txt"));
    CHECK(a.out == slurp(dir / "a" / "equations.txt"));

    for (const char* f : {"report.json", "episodes.csv", "equations.txt", "structure.json", "qnet.bin", "rnet.bin"}) {
        CHECK_MESSAGE(slurp(dir / "a" / f) == slurp(dir / "b" / f), f);
    }
    fs::remove_all(dir);
}

TEST_CASE("fit from zero reports the stalled parameters") {
    const auto dir = scratch("fit");
    REQUIRE(cli({"gen-data", "toy", "--out", dir.string(), "--n", "200"}).code == kExitOk);
    const auto stem = (dir / "toy_train").string();
    const auto structure = (dir / "toy_structure.json").string();

    auto r = cli({"fit", "--structure", structure, "--data", stem, "--init", "0", "--epochs", "20"});
    REQUIRE(r.code == kExitOk);
    auto j = nlohmann::json::parse(r.out);
    CHECK(j["converged"] == false);
    REQUIRE(j.contains("diagnostic"));
    CHECK(j["diagnostic"].get<std::string>().find("zero gradient") != std::string::npos);

    r = cli({"fit", "--structure", structure, "--data", stem, "--epochs", "0"});
    REQUIRE(r.code == kExitOk);
    j = nlohmann::json::parse(r.out);
    CHECK(j["final_loss"].get<double>() == j["initial_loss"].get<double>());

    CHECK(cli({"fit", "--structure", (dir / "none.json").string(), "--data", stem}).code == kExitConfig);
    fs::remove_all(dir);
}

TEST_CASE("probe sweep emits one row per grid point") {
    const auto r = cli({"probe", "sweep", "--grid", "-10..10", "--epochs", "2"});
    REQUIRE(r.code == kExitOk);
    const auto lines = std::count(r.out.begin(), r.out.end(), '\n');
    CHECK(lines == 22);  // header plus 21 rows
}

TEST_CASE("probe region at the fitted optimum is inside") {
    const auto dir = scratch("region");
    REQUIRE(cli({"gen-data", "toy", "--out", dir.string(), "--n", "200"}).code == kExitOk);
    auto s = nlohmann::json::parse(slurp(dir / "toy_structure.json"));
    const auto st = structure_from_json(s);
    auto w = LocalWeights::filled(st, 0.0);
    w.summation[2](0, 0) = 3.0;
    w.inner[0](3) = 2.5;
    const auto path = dir / "opt.json";
    std::ofstream(path) << structure_to_json(st, &w).dump();

    const auto r = cli({"probe", "region", "--structure", path.string(), "--data", (dir / "toy_train").string(),
                        "--n", "20"});
    REQUIRE(r.code == kExitOk);
    CHECK(nlohmann::json::parse(r.out)["membership"] == true);

    const auto e = cli({"eval", "--structure", path.string(), "--data", (dir / "toy_train").string(), "--test",
                        (dir / "toy_test").string()});
    REQUIRE(e.code == kExitOk);
    const auto ej = nlohmann::json::parse(e.out);
    CHECK(ej["metrics"]["nrmse_train"].get<double>() < 1e-12);
    fs::remove_all(dir);
}
