#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include "esmap/cli.hpp"

using namespace esmap;
using namespace esmap::cli;

namespace {

struct Workspace {
    Workspace() {
        root = fs::temp_directory_path() / ("esmap_cli_" + std::to_string(std::random_device{}()));
        fs::create_directories(root);
    }
    ~Workspace() { fs::remove_all(root); }

    fs::path write_config(const json& j, const std::string& name = "config.json") const {
        const fs::path p = root / name;
        atomic_write(p, j.dump(2));
        return p;
    }
    fs::path root;
};

std::string field_of(const json& j, Command cmd) {
    try {
        parse_config(j, cmd);
    } catch (const ConfigError& e) {
        return e.field();
    }
    return "";
}

Invocation invoke(Command cmd, fs::path config) {
    Invocation inv;
    inv.command = cmd;
    inv.config = std::move(config);
    return inv;
}

json sweep_config(const fs::path& out) {
    return {{"schema", 1},
            {"n_assets", 4},
            {"alphas", {0.6, 0.9}},
            {"rs", {0.1, 0.2, 0.4}},
            {"n_samples", 6},
            {"seed", 11},
            {"levels", {0.5, 1.0}},
            {"output_dir", out.string()}};
}

}  // namespace

TEST_CASE("config validation names the field") {
    const json base = {{"n_assets", 4}, {"alpha", 0.9}, {"t_obs", 40}, {"n_samples", 10}};
    CHECK(field_of(base, Command::Simulate).empty());

    auto j = base;
    j["alpha"] = 1.2;
    CHECK(field_of(j, Command::Simulate) == "alpha");
    j["alpha"] = "max-loss";
    CHECK(field_of(j, Command::Simulate).empty());
    j["estimator"] = "parametric";
    CHECK(field_of(j, Command::Simulate) == "alpha");

    j = base;
    j["n_samples"] = 0;
    CHECK(field_of(j, Command::Simulate) == "n_samples");
    j = base;
    j.erase("n_samples");
    CHECK(field_of(j, Command::Simulate) == "n_samples");
    j = base;
    j["n_assets"] = 1;
    CHECK(field_of(j, Command::Simulate) == "n_assets");
    j = base;
    j["bogus"] = true;
    CHECK(field_of(j, Command::Simulate) == "bogus");
    j = base;
    j["estimator"] = "bayes";
    CHECK(field_of(j, Command::Simulate) == "estimator");
    j = base;
    j["distribution"] = {{"family", "student-t"}, {"dof", -1}};
    CHECK(field_of(j, Command::Simulate) == "distribution.dof");
    j["distribution"] = {{"family", "gaussian-correlated"}};
    CHECK(field_of(j, Command::Simulate) == "distribution.covariance");
    j["distribution"] = {{"family", "gaussian-correlated"}, {"covariance", {{1, 2}, {2, 1}}}};
    CHECK(field_of(j, Command::Simulate) == "distribution.covariance");
    j["distribution"] = {{"family", "gaussian-correlated"},
                         {"covariance", {{"condition_number", 5}, {"seed", 2}}}};
    CHECK(field_of(j, Command::Simulate).empty());
    j = base;
    j["schema"] = 7;
    CHECK(field_of(j, Command::Simulate) == "schema");
    j = base;
    j["workers"] = 0;
    CHECK(field_of(j, Command::Simulate) == "workers");

    const json grid = {{"n_assets", 8}, {"alphas", {0.5, 0.9}}, {"rs", {0.1, 0.2, 0.3, 0.4}},
                       {"n_samples", 5}, {"levels", {0.2}}};
    CHECK(field_of(grid, Command::Sweep).empty());
    CHECK(field_of(grid, Command::Render).empty());
    auto g = grid;
    g["rs"] = {0.1, 1.0};
    CHECK(field_of(g, Command::Sweep) == "rs");
    g = grid;
    g["alphas"] = {0.9, 0.5};
    CHECK(field_of(g, Command::Sweep) == "alphas");
    g = grid;
    g["levels"] = {0.2, -1};
    CHECK(field_of(g, Command::Contour) == "levels");
    g.erase("levels");
    CHECK(field_of(g, Command::Contour) == "levels");
    g = grid;
    g["rs"] = {0.1, 0.2};
    CHECK(field_of(g, Command::Boundary) == "rs");
    g = grid;
    g["command"] = "sweep";
    CHECK(field_of(g, Command::Contour) == "command");
}

TEST_CASE("simulate one cell") {
    Workspace ws;
    const json j = {{"n_assets", 4}, {"t_obs", 40}, {"alpha", 0.9}, {"n_samples", 10},
                    {"output_dir", (ws.root / "out").string()}};
    std::ostringstream log;
    CHECK(run(invoke(Command::Simulate, ws.write_config(j)), log) == 0);
    const std::string csv = read_file(ws.root / "out" / "cell.csv");
    std::istringstream in(csv);
    std::string header, row, extra;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == grid_csv_header);
    CHECK(split_csv_line(row).size() == 15);
    CHECK_FALSE(std::getline(in, extra));

    // existing output without --overwrite
    std::ostringstream log2;
    CHECK(run(invoke(Command::Simulate, ws.write_config(j)), log2) == 2);
    CHECK(log2.str().find("overwrite") != std::string::npos);
    Invocation inv = invoke(Command::Simulate, ws.write_config(j));
    inv.overwrite = true;
    CHECK(run(inv, log2) == 0);
    CHECK(read_file(ws.root / "out" / "cell.csv") == csv);
}

TEST_CASE("sweep with a warm cache is byte identical") {
    Workspace ws;
    const auto cfg = ws.write_config(sweep_config(ws.root / "a"));
    std::ostringstream log1, log2;
    REQUIRE(run(invoke(Command::Sweep, cfg), log1) == 0);
    CHECK(log1.str().find("6 computed") != std::string::npos);
    const std::string first = read_file(ws.root / "a" / "grid.csv");
    fs::remove(ws.root / "a" / "grid.csv");
    REQUIRE(run(invoke(Command::Sweep, cfg), log2) == 0);
    CHECK(log2.str().find("100% cache hits") != std::string::npos);
    CHECK(log2.str().find("0 computed") != std::string::npos);
    CHECK(read_file(ws.root / "a" / "grid.csv") == first);

    // a cold run with several workers gives the same bytes
    auto j = sweep_config(ws.root / "b");
    j["workers"] = 3;
    std::ostringstream log3;
    REQUIRE(run(invoke(Command::Sweep, ws.write_config(j, "b.json")), log3) == 0);
    CHECK(read_file(ws.root / "b" / "grid.csv") == first);
}

TEST_CASE("contour, boundary and render artifacts") {
    Workspace ws;
    auto j = sweep_config(ws.root / "out");
    j["rs"] = {0.1, 0.3, 0.5, 0.7, 0.9};
    j["n_samples"] = 20;
    const auto cfg = ws.write_config(j);
    std::ostringstream log;
    REQUIRE(run(invoke(Command::Contour, cfg), log) == 0);
    const json contours = json::parse(read_file(ws.root / "out" / "contours.json"));
    CHECK(contours["levels"].size() == 2);
    REQUIRE(run(invoke(Command::Boundary, cfg), log) == 0);
    const json boundary = json::parse(read_file(ws.root / "out" / "boundary.json"));
    CHECK(boundary["method"] == "logistic-p50");
    CHECK(boundary["points"].size() == 2);
    REQUIRE(run(invoke(Command::Render, cfg), log) == 0);
    const std::string svg = read_file(ws.root / "out" / "map.svg");
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("phase boundary") != std::string::npos);
}

TEST_CASE("boundary on a grid that does not bracket the crossing is a runtime failure") {
    Workspace ws;
    auto j = sweep_config(ws.root / "out");
    j["rs"] = {0.01, 0.02, 0.03, 0.04};
    std::ostringstream log;
    CHECK(run(invoke(Command::Boundary, ws.write_config(j)), log) == 1);
    CHECK(log.str().find("widen") != std::string::npos);
}

TEST_CASE("simulate on a returns file") {
    Workspace ws;
    const auto x = sample_returns(DistributionSpec::gaussian(), 3, 60, make_stream(1, 1, 1));
    std::ostringstream csv;
    write_returns(csv, x);
    atomic_write(ws.root / "r.csv", csv.str());
    const json j = {{"alpha", 0.9},
                    {"input_returns", (ws.root / "r.csv").string()},
                    {"output_dir", (ws.root / "out").string()}};
    std::ostringstream log;
    REQUIRE(run(invoke(Command::Simulate, ws.write_config(j)), log) == 0);
    const json out = json::parse(read_file(ws.root / "out" / "portfolio.json"));
    CHECK(out["verdict"] == "optimal");
    CHECK(out["n_assets"] == 3);
    double sum = 0.0;
    for (const auto& [k, v] : out["weights"].items()) sum += v.get<double>();
    CHECK(std::abs(sum - 1.0) < 1e-9);

    atomic_write(ws.root / "bad.csv", "a,b,c\n1,2,x\n");
    json bad = j;
    bad["input_returns"] = (ws.root / "bad.csv").string();
    bad["output_dir"] = (ws.root / "bad").string();
    std::ostringstream log2;
    CHECK(run(invoke(Command::Simulate, ws.write_config(bad, "bad.json")), log2) == 2);
    CHECK(log2.str().find("column 3") != std::string::npos);
}

TEST_CASE("worker precedence") {
    RunConfig cfg;
    cfg.workers = 3;
    Invocation inv;
    ::unsetenv(workers_env);
    CHECK(resolve_workers(inv, cfg) == 3);
    ::setenv(workers_env, "5", 1);
    CHECK(resolve_workers(inv, cfg) == 5);
    inv.workers = 2;
    CHECK(resolve_workers(inv, cfg) == 2);
    inv.workers.reset();
    ::setenv(workers_env, "zero", 1);
    CHECK_THROWS_AS(resolve_workers(inv, cfg), ConfigError);
    ::unsetenv(workers_env);
    cfg.workers.reset();
    CHECK(resolve_workers(inv, cfg) == default_workers());
}

TEST_CASE("unreadable config and bad JSON exit 2") {
    Workspace ws;
    std::ostringstream log;
    CHECK(run(invoke(Command::Sweep, ws.root / "nope.json"), log) == 2);
    atomic_write(ws.root / "broken.json", "{not json");
    CHECK(run(invoke(Command::Sweep, ws.root / "broken.json"), log) == 2);
}

#ifdef ESMAP_CLI_PATH
TEST_CASE("command line exit codes") {
    Workspace ws;
    const json good = {{"n_assets", 4}, {"t_obs", 40}, {"alpha", 0.9}, {"n_samples", 10},
                       {"output_dir", (ws.root / "out").string()}};
    json bad = good;
    bad["alpha"] = 1.2;
    const std::string exe = ESMAP_CLI_PATH;
    auto status = [&](const std::string& args) {
        const int rc = std::system((exe + " " + args + " 2>" + (ws.root / "err.txt").string()).c_str());
        return WEXITSTATUS(rc);
    };
    CHECK(status("simulate --config " + ws.write_config(good).string()) == 0);
    CHECK(status("simulate --config " + ws.write_config(bad, "bad.json").string()) == 2);
    CHECK(read_file(ws.root / "err.txt").find("alpha") != std::string::npos);
    CHECK(status("simulate --config " + ws.write_config(good).string()) == 2);
    CHECK(status("simulate --overwrite --workers 2 --config " + ws.write_config(good).string()) == 0);
    CHECK(status("frobnicate") == 2);
    CHECK(status("simulate") == 2);
}
#endif
