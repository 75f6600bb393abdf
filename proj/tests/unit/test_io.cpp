#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "esmap/io.hpp"

using namespace esmap;

namespace {

struct TempDir {
    TempDir() {
        path = fs::temp_directory_path() /
               ("esmap_io_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    fs::path path;
};

std::size_t count(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
    return n;
}

}  // namespace

TEST_CASE("load a well-formed returns file") {
    std::istringstream in("A,B,C\n0.1,0.2,0.3\n-1,2,3\n1e-3,0,0\n4,5,6\n7,8,9\n");
    const auto x = read_returns(in);
    CHECK(x.t_obs() == 5);
    CHECK(x.n_assets() == 3);
    CHECK(x.asset_names() == std::vector<std::string>{"A", "B", "C"});
    CHECK(x(2, 0) == 1e-3);
}

TEST_CASE("parse errors name the position") {
    std::istringstream nan("A,B\n1,2\n3,NaN\n");
    try {
        read_returns(nan);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        const std::string what = e.what();
        CHECK(what.find("row 3") != std::string::npos);
        CHECK(what.find("column 2") != std::string::npos);
    }
    std::istringstream ragged("A,B\n1,2\n3\n");
    CHECK_THROWS_AS(read_returns(ragged), ParseError);
    std::istringstream empty("");
    CHECK_THROWS_AS(read_returns(empty), ParseError);
    std::istringstream junk("A\n1x\n");
    CHECK_THROWS_AS(read_returns(junk), ParseError);
}

TEST_CASE("returns round trip") {
    const auto x = sample_returns(DistributionSpec::student_t(3), 4, 200, make_stream(1, 2, 3));
    std::stringstream io;
    write_returns(io, x);
    const auto y = read_returns(io);
    CHECK((x.values() - y.values()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(x.values() == y.values());

    TempDir dir;
    atomic_write(dir.path / "r.csv", [&] {
        std::ostringstream os;
        write_returns(os, x);
        return os.str();
    }());
    CHECK(load_returns(dir.path / "r.csv").values() == x.values());
    CHECK_THROWS_AS(load_returns(dir.path / "missing.csv"), ParseError);
}

TEST_CASE("number formatting") {
    CHECK(format_number(0.1) == "0.1");
    CHECK(format_number(1.0) == "1");
    CHECK(format_number(std::nan("")) == "nan");
    CHECK(parse_number(" 2.5 ") == 2.5);
    CHECK_FALSE(parse_number("2.5a"));
    CHECK_FALSE(parse_number(""));
}

TEST_CASE("cache keys") {
    CellSpec c;
    c.n_assets = 4;
    c.t_obs = 40;
    c.n_samples = 10;
    const auto k = cache_key(c);
    CHECK(k.size() == 16);
    CHECK(cache_key(c) == k);
    CellSpec d = c;
    d.seed = 1;
    CHECK(cache_key(d) != k);
    d = c;
    d.cell_index = 1;
    CHECK(cache_key(d) != k);
    d = c;
    d.dist = DistributionSpec::student_t(4);
    CHECK(cache_key(d) != k);
    CHECK(cache_key(c, "other-version") != k);
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("directory cache") {
    TempDir dir;
    CellSpec c;
    c.n_assets = 3;
    c.t_obs = 30;
    c.n_samples = 4;
    const CellStats s = run_cell(c);
    DirectoryCache cache(dir.path);
    CHECK_FALSE(cache.find(c));
    cache.store(c, s);
    const auto hit = cache.find(c);
    REQUIRE(hit);
    CHECK(hit->delta_mean == s.delta_mean);
    CHECK(hit->delta_se == s.delta_se);
    CHECK(hit->n_feasible == s.n_feasible);

    const json entry = json::parse(read_file(cache.entry_path(c)));
    CHECK(entry.contains("created_at"));
    CHECK(entry.at("code_version") == std::string(code_version));

    DirectoryCache stale(dir.path, "older");
    CHECK_FALSE(stale.find(c));

    // a tampered entry whose spec does not match is not a hit
    json bad = entry;
    bad["spec"]["seed"] = 99;
    atomic_write(cache.entry_path(c), bad.dump());
    CHECK_FALSE(cache.find(c));

    CellStats none;
    none.n_unbounded = 4;
    CellSpec e = c;
    e.seed = 5;
    cache.store(e, none);
    const auto h2 = cache.find(e);
    REQUIRE(h2);
    CHECK(std::isnan(h2->delta_mean));
}

TEST_CASE("grid csv schema") {
    GridSpec g;
    g.alphas = {Confidence::level(0.9), Confidence::max_loss()};
    g.rs = {0.3};
    g.n_assets = 3;
    g.n_samples = 2;
    const auto res = sweep(g);
    const std::string csv = grid_csv(res);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line ==
          "alpha,r_nominal,r_realized,n_assets,t_obs,estimator,distribution,n_samples,n_feasible,"
          "n_unbounded,n_failed,feasible_fraction,delta_mean,delta_se,seed");
    std::getline(in, line);
    CHECK(line.rfind("0.9,0.3,0.3,3,10,historical,gaussian,2,", 0) == 0);
    CHECK(split_csv_line(line).size() == 15);
    std::getline(in, line);
    CHECK(line.rfind("1,0.3,", 0) == 0);
}

TEST_CASE("contours and boundary json round trip") {
    ContourSet set{{{0.1, {{{0.9, 0.02}, {0.95, 0.025}}}}, {0.5, {}}}};
    const json j = contours_to_json(set);
    CHECK(j["levels"][1]["empty"] == true);
    const auto back = contours_from_json(j);
    REQUIRE(back.levels.size() == 2);
    CHECK(back.levels[0].polylines[0][1].r == 0.025);
    BoundaryCurve b{{{0.9, 0.4, 0.01}}, "logistic-p50"};
    const auto bb = boundary_from_json(boundary_to_json(b));
    CHECK(bb.points[0].r_star == 0.4);
    CHECK(bb.method == "logistic-p50");
}

TEST_CASE("svg rendering") {
    ContourSet one{{{0.1, {{{0.9, 0.02}, {0.95, 0.025}, {0.99, 0.01}}}}}};
    const auto svg = render_svg(one);
    CHECK(svg.rfind("<?xml", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(count(svg, "<polyline") == 1);
    CHECK(count(svg, "no crossing") == 0);

    ContourSet empty_level{{{0.1, {{{0.9, 0.02}, {0.95, 0.025}}}}, {0.7, {}}}};
    const BoundaryCurve b{{{0.9, 0.4, 0.01}, {0.95, 0.3, 0.01}}, "logistic-p50"};
    const auto svg2 = render_svg(empty_level, &b);
    CHECK(count(svg2, "no crossing") == 1);
    CHECK(count(svg2, "class=\"boundary\"") == 1);
    CHECK(count(svg2, "<polyline") == 2);
    CHECK_THROWS(render_svg(ContourSet{}));
}

TEST_CASE("atomic write replaces content") {
    TempDir dir;
    const auto p = dir.path / "sub" / "f.txt";
    atomic_write(p, "one");
    atomic_write(p, "two");
    CHECK(read_file(p) == "two");
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path / "sub")) ++files;
    CHECK(files == 1);
}
