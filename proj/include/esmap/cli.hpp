#pragma once

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "esmap/io.hpp"

namespace esmap::cli {

enum class Command { Simulate, Sweep, Contour, Boundary, Render };

inline std::string_view to_string(Command c) noexcept {
    switch (c) {
        case Command::Simulate: return "simulate";
        case Command::Sweep: return "sweep";
        case Command::Contour: return "contour";
        case Command::Boundary: return "boundary";
        case Command::Render: return "render";
    }
    return "?";
}

/// Bad configuration; `field` names the offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

inline constexpr int schema_version = 1;
inline constexpr const char* workers_env = "ESMAP_WORKERS";

struct RunConfig {
    Command command = Command::Sweep;
    std::vector<Confidence> alphas;
    std::vector<double> rs;
    std::size_t n_assets = 0;
    std::size_t t_obs = 0;  // simulate only
    DistributionSpec dist;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
    Estimator estimator = Estimator::Historical;
    fs::path output_dir = "out";
    std::optional<fs::path> cache_dir;
    std::optional<std::size_t> workers;
    std::vector<double> levels;
    std::optional<fs::path> input_returns;

    GridSpec grid() const {
        GridSpec g;
        g.alphas = alphas;
        g.rs = rs;
        g.n_assets = n_assets;
        g.dist = dist;
        g.n_samples = n_samples;
        g.seed = seed;
        g.estimator = estimator;
        return g;
    }

    CellSpec cell() const {
        CellSpec c;
        c.alpha = alphas.at(0);
        c.n_assets = n_assets;
        c.t_obs = t_obs;
        c.dist = dist;
        c.n_samples = n_samples;
        c.seed = seed;
        c.estimator = estimator;
        return c;
    }

    fs::path effective_cache_dir() const { return cache_dir ? *cache_dir : output_dir / ".cache"; }
};

namespace detail {

inline const json* get(const json& j, const char* key) {
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

inline std::uint64_t unsigned_field(const json& j, const std::string& name, std::uint64_t min) {
    if (!j.is_number_integer()) throw ConfigError(name, "expected an integer");
    if (j.is_number_unsigned()) {
        const auto v = j.get<std::uint64_t>();
        if (v < min) throw ConfigError(name, "must be >= " + std::to_string(min));
        return v;
    }
    const auto v = j.get<std::int64_t>();
    if (v < static_cast<std::int64_t>(min)) throw ConfigError(name, "must be >= " + std::to_string(min));
    return static_cast<std::uint64_t>(v);
}

inline double number_field(const json& j, const std::string& name) {
    if (!j.is_number()) throw ConfigError(name, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw ConfigError(name, "must be finite");
    return v;
}

inline Confidence confidence_field(const json& j, const std::string& name) {
    if (j.is_string()) {
        if (j.get<std::string>() == "max-loss") return Confidence::max_loss();
        throw ConfigError(name, "expected a number in (0, 1) or \"max-loss\"");
    }
    const double a = number_field(j, name);
    if (!(a > 0.0 && a < 1.0)) throw ConfigError(name, "must lie in (0, 1), got " + format_number(a));
    return Confidence::level(a);
}

inline DistributionSpec distribution_field(const json& j, std::size_t n_assets) {
    if (j.is_string()) {
        const auto f = parse_family(j.get<std::string>());
        if (!f) throw ConfigError("distribution", "unknown family '" + j.get<std::string>() + "'");
        if (*f == Family::GaussianCorrelated)
            throw ConfigError("distribution.covariance", "required for gaussian-correlated");
        DistributionSpec d;
        d.family = *f;
        return d;
    }
    if (!j.is_object()) throw ConfigError("distribution", "expected a family name or an object");
    for (const auto& [k, v] : j.items())
        if (k != "family" && k != "dof" && k != "scale" && k != "covariance")
            throw ConfigError("distribution." + k, "unknown key");
    const json* fam = get(j, "family");
    if (!fam || !fam->is_string()) throw ConfigError("distribution.family", "missing family name");
    const auto f = parse_family(fam->get<std::string>());
    if (!f) throw ConfigError("distribution.family", "unknown family '" + fam->get<std::string>() + "'");
    DistributionSpec d;
    d.family = *f;
    if (const json* dof = get(j, "dof")) {
        if (*f != Family::StudentT) throw ConfigError("distribution.dof", "only valid for student-t");
        d.dof = number_field(*dof, "distribution.dof");
        if (!(d.dof > 0.0)) throw ConfigError("distribution.dof", "must be > 0");
    }
    if (const json* scale = get(j, "scale")) {
        d.scale = number_field(*scale, "distribution.scale");
        if (!(d.scale > 0.0)) throw ConfigError("distribution.scale", "must be > 0");
    }
    const json* cov = get(j, "covariance");
    if ((cov != nullptr) != (*f == Family::GaussianCorrelated))
        throw ConfigError("distribution.covariance",
                          "must be given exactly for the gaussian-correlated family");
    if (cov) {
        const std::string name = "distribution.covariance";
        if (cov->is_object()) {
            for (const auto& [k, v] : cov->items())
                if (k != "condition_number" && k != "seed") throw ConfigError(name + "." + k, "unknown key");
            const json* cn = get(*cov, "condition_number");
            if (!cn) throw ConfigError(name + ".condition_number", "missing");
            const double cond = number_field(*cn, name + ".condition_number");
            if (!(cond >= 1.0)) throw ConfigError(name + ".condition_number", "must be >= 1");
            std::uint64_t cseed = 0;
            if (const json* s = get(*cov, "seed")) cseed = unsigned_field(*s, name + ".seed", 0);
            d.covariance = random_covariance(n_assets, cond, make_stream(cseed, ~0ULL, 0));
        } else if (cov->is_array()) {
            const auto n = static_cast<Eigen::Index>(cov->size());
            if (static_cast<std::size_t>(n) != n_assets)
                throw ConfigError(name, "has " + std::to_string(n) + " rows but n_assets is " +
                                            std::to_string(n_assets));
            Eigen::MatrixXd m(n, n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const json& row = (*cov)[static_cast<std::size_t>(i)];
                if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n)
                    throw ConfigError(name, "row " + std::to_string(i) + " is not of length " +
                                                std::to_string(n));
                for (Eigen::Index k = 0; k < n; ++k)
                    m(i, k) = number_field(row[static_cast<std::size_t>(k)], name);
            }
            try {
                d.covariance = CovarianceMatrix(m);
                cholesky(*d.covariance);
            } catch (const Error& e) {
                throw ConfigError(name, e.what());
            }
        } else {
            throw ConfigError(name, "expected a matrix or {\"condition_number\": ...}");
        }
    }
    return d;
}

template <class T, class F>
std::vector<T> list_field(const json& j, const std::string& name, F&& each) {
    if (!j.is_array() || j.empty()) throw ConfigError(name, "expected a non-empty array");
    std::vector<T> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(each(j[i], name));
    return out;
}

}  // namespace detail

/// Validates a parsed config for `command`. Throws ConfigError naming the
/// first bad field; nothing is computed here.
inline RunConfig parse_config(const json& j, Command command) {
    using namespace detail;
    if (!j.is_object()) throw ConfigError("config", "top level must be a JSON object");
    static const std::vector<std::string> known = {
        "schema",  "command",  "alpha",      "alphas",    "r",          "rs",
        "t_obs",   "n_assets", "distribution", "n_samples", "seed",       "estimator",
        "output_dir", "cache_dir", "workers", "levels",    "input_returns"};
    for (const auto& [k, v] : j.items())
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw ConfigError(k, "unknown key");

    RunConfig c;
    c.command = command;
    if (const json* s = get(j, "schema"))
        if (!s->is_number_integer() || s->get<int>() != schema_version)
            throw ConfigError("schema", "unsupported version (expected " +
                                            std::to_string(schema_version) + ")");
    if (const json* cmd = get(j, "command"))
        if (!cmd->is_string() || cmd->get<std::string>() != to_string(command))
            throw ConfigError("command", "config is for '" + cmd->dump() + "', not '" +
                                             std::string(to_string(command)) + "'");

    const bool from_file = command == Command::Simulate && get(j, "input_returns");
    if (const json* n = get(j, "n_assets"))
        c.n_assets = unsigned_field(*n, "n_assets", 2);
    else if (!from_file)
        throw ConfigError("n_assets", "missing");

    if (const json* a = get(j, "alpha")) c.alphas = {confidence_field(*a, "alpha")};
    if (const json* as = get(j, "alphas")) {
        if (get(j, "alpha")) throw ConfigError("alphas", "give either alpha or alphas");
        c.alphas = list_field<Confidence>(*as, "alphas", confidence_field);
    }
    if (c.alphas.empty()) throw ConfigError("alpha", "missing");
    if (const json* r = get(j, "r")) c.rs = {number_field(*r, "r")};
    if (const json* rs = get(j, "rs")) {
        if (get(j, "r")) throw ConfigError("rs", "give either r or rs");
        c.rs = list_field<double>(*rs, "rs", number_field);
    }
    for (double r : c.rs)
        if (!(r > 0.0 && r < 1.0))
            throw ConfigError(get(j, "r") ? "r" : "rs", "must lie in (0, 1), got " + format_number(r));

    if (command == Command::Simulate) {
        if (c.alphas.size() != 1) throw ConfigError("alphas", "simulate takes a single alpha");
        if (const json* t = get(j, "t_obs")) {
            if (!c.rs.empty()) throw ConfigError("t_obs", "give either t_obs or r");
            c.t_obs = unsigned_field(*t, "t_obs", 1);
        } else if (c.rs.size() == 1) {
            c.t_obs = t_obs_for(c.n_assets, c.rs[0]);
        } else if (!from_file) {
            throw ConfigError("t_obs", "missing (or give r)");
        }
    } else {
        if (get(j, "t_obs")) throw ConfigError("t_obs", "only valid for simulate");
        if (c.rs.empty()) throw ConfigError("rs", "missing");
        for (std::size_t i = 1; i < c.alphas.size(); ++i)
            if (!(c.alphas[i - 1] < c.alphas[i])) throw ConfigError("alphas", "must be strictly increasing");
        for (std::size_t i = 1; i < c.rs.size(); ++i)
            if (!(c.rs[i - 1] < c.rs[i])) throw ConfigError("rs", "must be strictly increasing");
        if ((command == Command::Contour || command == Command::Render) &&
            (c.alphas.size() < 2 || c.rs.size() < 2))
            throw ConfigError(c.alphas.size() < 2 ? "alphas" : "rs",
                              "contouring needs at least two values");
        if (command == Command::Boundary && c.rs.size() < 4)
            throw ConfigError("rs", "boundary fitting needs at least four values");
    }

    if (const json* d = get(j, "distribution")) c.dist = distribution_field(*d, c.n_assets);

    if (const json* s = get(j, "n_samples"))
        c.n_samples = unsigned_field(*s, "n_samples", 1);
    else if (!from_file)
        throw ConfigError("n_samples", "missing");
    if (const json* sd = get(j, "seed")) c.seed = unsigned_field(*sd, "seed", 0);
    if (const json* e = get(j, "estimator")) {
        const auto est = e->is_string() ? parse_estimator(e->get<std::string>()) : std::nullopt;
        if (!est) throw ConfigError("estimator", "expected historical, parametric or parametric-zero-mean");
        c.estimator = *est;
    }
    if (c.estimator != Estimator::Historical)
        for (const auto& a : c.alphas)
            if (a.is_max_loss()) throw ConfigError("alpha", "max-loss needs the historical estimator");

    if (const json* o = get(j, "output_dir")) {
        if (!o->is_string() || o->get<std::string>().empty())
            throw ConfigError("output_dir", "expected a path");
        c.output_dir = o->get<std::string>();
    }
    if (const json* cd = get(j, "cache_dir")) {
        if (!cd->is_string() || cd->get<std::string>().empty())
            throw ConfigError("cache_dir", "expected a path");
        c.cache_dir = fs::path(cd->get<std::string>());
    }
    if (const json* w = get(j, "workers")) c.workers = unsigned_field(*w, "workers", 1);
    if (const json* l = get(j, "levels")) {
        c.levels = list_field<double>(*l, "levels", number_field);
        for (double v : c.levels)
            if (!(v > 0.0)) throw ConfigError("levels", "must be positive");
    }
    if ((command == Command::Contour || command == Command::Render) && c.levels.empty())
        throw ConfigError("levels", "missing");
    if (const json* in = get(j, "input_returns")) {
        if (command != Command::Simulate) throw ConfigError("input_returns", "only valid for simulate");
        if (!in->is_string()) throw ConfigError("input_returns", "expected a path");
        c.input_returns = fs::path(in->get<std::string>());
        if (!fs::exists(*c.input_returns)) throw ConfigError("input_returns", "file not found");
    }

    try {
        if (command == Command::Simulate) {
            if (!c.input_returns) c.cell().validate();
        } else {
            c.grid().validate();
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(command == Command::Simulate ? "t_obs" : "rs", e.what());
    }
    return c;
}

struct Invocation {
    Command command = Command::Sweep;
    fs::path config;
    std::optional<std::size_t> workers;
    bool overwrite = false;
    std::optional<fs::path> cache_dir;
};

/// --workers beats the environment, which beats the config file.
inline std::size_t resolve_workers(const Invocation& inv, const RunConfig& cfg) {
    if (inv.workers) return *inv.workers;
    if (const char* env = std::getenv(workers_env); env && *env) {
        const auto v = parse_number(env);
        if (!v || *v < 1 || *v != std::floor(*v))
            throw ConfigError(workers_env, "must be a positive integer");
        return static_cast<std::size_t>(*v);
    }
    if (cfg.workers) return *cfg.workers;
    return default_workers();
}

inline fs::path primary_output(const RunConfig& c) {
    switch (c.command) {
        case Command::Simulate: return c.output_dir / (c.input_returns ? "portfolio.json" : "cell.csv");
        case Command::Sweep: return c.output_dir / "grid.csv";
        case Command::Contour: return c.output_dir / "contours.json";
        case Command::Boundary: return c.output_dir / "boundary.json";
        case Command::Render: return c.output_dir / "map.svg";
    }
    return c.output_dir;
}

namespace detail {

inline std::string portfolio_report(const RunConfig& cfg, const ReturnMatrix& x) {
    json out;
    out["n_assets"] = x.n_assets();
    out["t_obs"] = x.t_obs();
    out["alpha"] = confidence_to_json(cfg.alphas[0]);
    out["estimator"] = std::string(to_string(cfg.estimator));
    std::optional<PortfolioWeights> w;
    if (cfg.estimator == Estimator::Historical) {
        const auto res = optimize_es_historical(x, cfg.alphas[0]);
        if (const auto* sol = std::get_if<EsSolution>(&res)) {
            out["verdict"] = "optimal";
            out["es"] = sol->es_value;
            out["var"] = sol->var_level;
            out["tail_count"] = sol->tail_count;
            w = sol->weights;
        } else {
            out["verdict"] = "unbounded";
        }
    } else {
        MomentEstimates m = estimate_moments(x);
        if (cfg.estimator == Estimator::ParametricGaussianZeroMean) m.mu_hat.setZero();
        try {
            w = optimize_es_parametric(m, cfg.alphas[0].alpha());
            out["verdict"] = "optimal";
        } catch (const SingularCovariance&) {
            out["verdict"] = "unbounded";
        } catch (const ParametricUnbounded&) {
            out["verdict"] = "unbounded";
        }
    }
    if (w) {
        json weights = json::object();
        for (std::size_t i = 0; i < w->size(); ++i) {
            const std::string name =
                x.asset_names().empty() ? "a" + std::to_string(i + 1) : x.asset_names()[i];
            weights[name] = (*w)[i];
        }
        out["weights"] = std::move(weights);
        out["delta_vs_equal_weights"] = delta_of_weights(*w);
    }
    return out.dump(2) + "\n";
}

}  // namespace detail

/// Validates, computes and writes the artifact for one command. Returns
/// the process exit status: 0 success, 1 runtime failure, 2 bad input.
inline int run(const Invocation& inv, std::ostream& log) {
    RunConfig cfg;
    std::size_t workers = 1;
    fs::path target;
    try {
        json j;
        try {
            j = json::parse(read_file(inv.config));
        } catch (const json::parse_error& e) {
            throw ConfigError("config", std::string("not valid JSON: ") + e.what());
        } catch (const Error& e) {
            throw ConfigError("config", e.what());
        }
        cfg = parse_config(j, inv.command);
        if (inv.cache_dir) cfg.cache_dir = *inv.cache_dir;
        workers = resolve_workers(inv, cfg);
        target = primary_output(cfg);
        if (fs::exists(target) && !inv.overwrite)
            throw ConfigError("output_dir", target.string() + " exists; pass --overwrite to replace it");
        std::error_code ec;
        fs::create_directories(cfg.output_dir, ec);
        if (ec || !fs::is_directory(cfg.output_dir))
            throw ConfigError("output_dir", "cannot create " + cfg.output_dir.string());
    } catch (const ConfigError& e) {
        log << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (cfg.command == Command::Simulate && cfg.input_returns) {
            ReturnMatrix x;
            try {
                x = load_returns(*cfg.input_returns);
            } catch (const ParseError& e) {
                log << "error: input_returns: " << e.what() << "\n";
                return 2;
            }
            atomic_write(target, detail::portfolio_report(cfg, x));
            log << "wrote " << target.string() << "\n";
            return 0;
        }

        DirectoryCache cache(cfg.effective_cache_dir());
        if (cfg.command == Command::Simulate) {
            const CellSpec cell = cfg.cell();
            CellStats stats;
            if (auto hit = cache.find(cell)) {
                stats = *hit;
                log << "simulate: cache hit\n";
            } else {
                stats = run_cell(cell, RunOptions{workers});
                cache.store(cell, stats);
            }
            atomic_write(target, cell_csv(cell, stats));
            log << "wrote " << target.string() << "\n";
            return 0;
        }

        SweepCounters counters;
        const GridResult result = sweep(cfg.grid(), SweepOptions{workers, &cache}, &counters);
        const std::size_t total = counters.cached + counters.computed;
        log << to_string(cfg.command) << ": " << total << " cells, " << counters.computed
            << " computed, " << counters.cached << " cached ("
            << format_number(std::round(1000.0 * static_cast<double>(counters.cached) /
                                        static_cast<double>(total)) / 10.0)
            << "% cache hits)\n";

        std::string content;
        switch (cfg.command) {
            case Command::Sweep: content = grid_csv(result); break;
            case Command::Contour:
                content = contours_to_json(extract_contours(result, cfg.levels)).dump(2) + "\n";
                break;
            case Command::Boundary:
                content = boundary_to_json(fit_boundary(result)).dump(2) + "\n";
                break;
            case Command::Render: {
                const ContourSet contours = extract_contours(result, cfg.levels);
                std::optional<BoundaryCurve> boundary;
                try {
                    boundary = fit_boundary(result);
                } catch (const InsufficientSpan& e) {
                    log << "render: boundary omitted (" << e.what() << ")\n";
                }
                content = render_svg(contours, boundary ? &*boundary : nullptr);
                break;
            }
            case Command::Simulate: break;
        }
        atomic_write(target, content);
        log << "wrote " << target.string() << "\n";
        return 0;
    } catch (const InsufficientSpan& e) {
        log << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace esmap::cli
