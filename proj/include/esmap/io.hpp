#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "esmap/map.hpp"

namespace esmap {

inline constexpr std::string_view code_version = "esmap-1.0.0/simplex-3";

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------- numbers

/// Shortest decimal that round-trips; "nan" / "inf" / "-inf" otherwise.
inline std::string format_number(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline std::string format_number17(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline std::optional<double> parse_number(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

// ---------------------------------------------------------------- returns CSV

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    out.push_back(std::move(field));
    return out;
}

/// Header row of asset names, then one row of returns per period.
inline ReturnMatrix read_returns(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("returns file is empty");
    std::vector<std::string> names = split_csv_line(line);
    const std::size_t n = names.size();
    std::vector<std::vector<double>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != n)
            throw ParseError("row " + std::to_string(line_no) + ": expected " + std::to_string(n) +
                             " columns, found " + std::to_string(fields.size()));
        std::vector<double> row(n);
        for (std::size_t j = 0; j < n; ++j) {
            const auto v = parse_number(fields[j]);
            if (!v || !std::isfinite(*v))
                throw ParseError("row " + std::to_string(line_no) + ", column " +
                                 std::to_string(j + 1) + " (" + names[j] + "): invalid value '" +
                                 fields[j] + "'");
            row[j] = *v;
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError("returns file has a header but no data rows");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n));
    for (std::size_t t = 0; t < rows.size(); ++t)
        for (std::size_t j = 0; j < n; ++j)
            m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = rows[t][j];
    return ReturnMatrix(std::move(m), std::move(names));
}

inline ReturnMatrix load_returns(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    return read_returns(in);
}

inline void write_returns(std::ostream& out, const ReturnMatrix& x) {
    for (std::size_t j = 0; j < x.n_assets(); ++j) {
        if (j) out << ',';
        out << (x.asset_names().empty() ? "a" + std::to_string(j + 1) : x.asset_names()[j]);
    }
    out << '\n';
    for (std::size_t t = 0; t < x.t_obs(); ++t) {
        for (std::size_t j = 0; j < x.n_assets(); ++j) {
            if (j) out << ',';
            out << format_number17(x(t, j));
        }
        out << '\n';
    }
}

// ---------------------------------------------------------------- files

/// Writes through a temporary sibling and renames it into place.
inline void atomic_write(const fs::path& path, std::string_view content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    static thread_local std::mt19937_64 salt{std::random_device{}()};
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(salt());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw Error("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw Error("cannot rename into " + path.string() + ": " + ec.message());
    }
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------- JSON

inline json confidence_to_json(const Confidence& c) {
    if (c.is_max_loss()) return "max-loss";
    return c.alpha();
}

inline json nullable(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline double number_or_nan(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

/// Canonical form of a cell: every field that influences its statistics.
inline json canonical_cell(const CellSpec& cell) {
    json j;
    j["alpha"] = confidence_to_json(cell.alpha);
    j["n_assets"] = cell.n_assets;
    j["t_obs"] = cell.t_obs;
    j["n_samples"] = cell.n_samples;
    j["seed"] = cell.seed;
    j["cell_index"] = cell.cell_index;
    j["estimator"] = std::string(to_string(cell.estimator));
    j["family"] = std::string(to_string(cell.dist.family));
    j["scale"] = cell.dist.scale;
    if (cell.dist.family == Family::StudentT) j["dof"] = cell.dist.dof;
    if (cell.dist.covariance) {
        const auto& m = cell.dist.covariance->matrix();
        json rows = json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            json row = json::array();
            for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
            rows.push_back(std::move(row));
        }
        j["covariance"] = std::move(rows);
    }
    return j;
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string cache_key(const CellSpec& cell, std::string_view version = code_version) {
    std::string text = canonical_cell(cell).dump();
    text += '\n';
    text += version;
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(text);
    return os.str();
}

inline json stats_to_json(const CellStats& s) {
    json j;
    j["delta_mean"] = nullable(s.delta_mean);
    j["delta_se"] = nullable(s.delta_se);
    j["feasible_fraction"] = s.feasible_fraction;
    j["n_feasible"] = s.n_feasible;
    j["n_unbounded"] = s.n_unbounded;
    j["n_failed"] = s.n_failed;
    return j;
}

inline CellStats stats_from_json(const json& j) {
    CellStats s;
    s.delta_mean = number_or_nan(j.at("delta_mean"));
    s.delta_se = number_or_nan(j.at("delta_se"));
    s.feasible_fraction = j.at("feasible_fraction").get<double>();
    s.n_feasible = j.at("n_feasible").get<std::size_t>();
    s.n_unbounded = j.at("n_unbounded").get<std::size_t>();
    s.n_failed = j.at("n_failed").get<std::size_t>();
    return s;
}

class MemoryCache : public CellCache {
public:
    std::optional<CellStats> find(const CellSpec& cell) override {
        auto it = entries_.find(canonical_cell(cell).dump());
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }
    void store(const CellSpec& cell, const CellStats& stats) override {
        entries_.emplace(canonical_cell(cell).dump(), stats);
    }
    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::map<std::string, CellStats> entries_;
};

/// One JSON file per cell, named by its cache key. An entry is a hit only
/// if both the stored canonical spec and code version match.
class DirectoryCache : public CellCache {
public:
    explicit DirectoryCache(fs::path dir, std::string version = std::string(code_version))
        : dir_(std::move(dir)), version_(std::move(version)) {}

    fs::path entry_path(const CellSpec& cell) const {
        return dir_ / (cache_key(cell, version_) + ".json");
    }

    std::optional<CellStats> find(const CellSpec& cell) override {
        const fs::path p = entry_path(cell);
        if (!fs::exists(p)) return std::nullopt;
        try {
            const json j = json::parse(read_file(p));
            if (j.at("code_version").get<std::string>() != version_) return std::nullopt;
            if (j.at("spec") != canonical_cell(cell)) return std::nullopt;
            return stats_from_json(j.at("stats"));
        } catch (const json::exception&) {
            return std::nullopt;
        }
    }

    void store(const CellSpec& cell, const CellStats& stats) override {
        const fs::path p = entry_path(cell);
        if (fs::exists(p)) return;
        json j;
        j["key"] = cache_key(cell, version_);
        j["spec"] = canonical_cell(cell);
        j["stats"] = stats_to_json(stats);
        j["code_version"] = version_;
        j["created_at"] = std::chrono::duration_cast<std::chrono::seconds>(
                              std::chrono::system_clock::now().time_since_epoch())
                              .count();
        atomic_write(p, j.dump(2) + "\n");
    }

    const fs::path& directory() const noexcept { return dir_; }

private:
    fs::path dir_;
    std::string version_;
};

// ---------------------------------------------------------------- grid CSV

inline constexpr std::string_view grid_csv_header =
    "alpha,r_nominal,r_realized,n_assets,t_obs,estimator,distribution,n_samples,n_feasible,"
    "n_unbounded,n_failed,feasible_fraction,delta_mean,delta_se,seed";

inline void write_cell_row(std::ostream& out, const CellSpec& cell, double r_nominal,
                           const CellStats& s) {
    out << format_number(cell.alpha.alpha()) << ',' << format_number(r_nominal) << ','
        << format_number(cell.aspect_ratio()) << ',' << cell.n_assets << ',' << cell.t_obs << ','
        << to_string(cell.estimator) << ',' << cell.dist.name() << ',' << cell.n_samples << ','
        << s.n_feasible << ',' << s.n_unbounded << ',' << s.n_failed << ','
        << format_number(s.feasible_fraction) << ',' << format_number(s.delta_mean) << ','
        << format_number(s.delta_se) << ',' << cell.seed << '\n';
}

inline std::string grid_csv(const GridResult& result) {
    std::ostringstream out;
    out << grid_csv_header << '\n';
    for (std::size_t ai = 0; ai < result.grid.alphas.size(); ++ai)
        for (std::size_t ri = 0; ri < result.grid.rs.size(); ++ri)
            write_cell_row(out, result.grid.cell(ai, ri), result.grid.rs[ri], result.at(ai, ri));
    return out.str();
}

inline std::string cell_csv(const CellSpec& cell, const CellStats& stats) {
    std::ostringstream out;
    out << grid_csv_header << '\n';
    write_cell_row(out, cell, cell.aspect_ratio(), stats);
    return out.str();
}

// ---------------------------------------------------------------- contours / boundary

inline json contours_to_json(const ContourSet& set) {
    json levels = json::array();
    for (const auto& lvl : set.levels) {
        json lines = json::array();
        for (const auto& line : lvl.polylines) {
            json pts = json::array();
            for (const auto& p : line) pts.push_back({p.alpha, p.r});
            lines.push_back(std::move(pts));
        }
        json l;
        l["level"] = lvl.level;
        l["empty"] = lvl.empty();
        l["polylines"] = std::move(lines);
        levels.push_back(std::move(l));
    }
    json j;
    j["field"] = "1/delta";
    j["axes"] = {"alpha", "r"};
    j["levels"] = std::move(levels);
    return j;
}

inline ContourSet contours_from_json(const json& j) {
    ContourSet set;
    for (const auto& l : j.at("levels")) {
        ContourLevel lvl{l.at("level").get<double>(), {}};
        for (const auto& line : l.at("polylines")) {
            Polyline pl;
            for (const auto& p : line) pl.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
            lvl.polylines.push_back(std::move(pl));
        }
        set.levels.push_back(std::move(lvl));
    }
    return set;
}

inline json boundary_to_json(const BoundaryCurve& b) {
    json pts = json::array();
    for (const auto& p : b.points)
        pts.push_back({{"alpha", p.alpha}, {"r_star", p.r_star}, {"r_star_se", p.r_star_se}});
    return {{"method", b.method}, {"points", std::move(pts)}};
}

inline BoundaryCurve boundary_from_json(const json& j) {
    BoundaryCurve b;
    b.method = j.at("method").get<std::string>();
    for (const auto& p : j.at("points"))
        b.points.push_back({p.at("alpha").get<double>(), p.at("r_star").get<double>(),
                            p.at("r_star_se").get<double>()});
    return b;
}

// ---------------------------------------------------------------- SVG

/// Standalone SVG of the contour map: alpha across, r upward. One
/// <polyline> per contour chain, the boundary dashed.
inline std::string render_svg(const ContourSet& contours, const BoundaryCurve* boundary = nullptr) {
    if (contours.levels.empty()) throw Error("nothing to render: no contour levels");
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    auto extend = [&](double x, double y) {
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
    };
    for (const auto& l : contours.levels)
        for (const auto& line : l.polylines)
            for (const auto& p : line) extend(p.alpha, p.r);
    if (boundary)
        for (const auto& p : boundary->points) extend(p.alpha, p.r_star);
    if (!std::isfinite(x0)) {
        x0 = 0.0;
        x1 = 1.0;
        y0 = 0.0;
        y1 = 1.0;
    }
    y0 = std::min(y0, 0.0);
    if (x1 - x0 < 1e-9) x1 = x0 + 1e-3, x0 -= 1e-3;
    if (y1 - y0 < 1e-9) y1 = y0 + 1e-3;

    constexpr double width = 640, height = 480, left = 70, right = 170, top = 30, bottom = 60;
    const double pw = width - left - right, ph = height - top - bottom;
    auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto sy = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };
    auto fmt = [](double v) {
        std::ostringstream os;
        os << std::setprecision(6) << v;
        return os.str();
    };
    static constexpr std::string_view palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                                   "#9467bd", "#8c564b", "#e377c2", "#17becf"};

    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<g class=\"axes\" stroke=\"black\" stroke-width=\"1\">\n"
        << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\""
        << top + ph << "\"/>\n"
        << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
        << "\"/>\n</g>\n";
    svg << "<g class=\"ticks\" font-family=\"sans-serif\" font-size=\"11\">\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
        svg << "<text x=\"" << fmt(sx(fx)) << "\" y=\"" << top + ph + 16
            << "\" text-anchor=\"middle\">" << fmt(fx) << "</text>\n";
        svg << "<text x=\"" << left - 6 << "\" y=\"" << fmt(sy(fy) + 4)
            << "\" text-anchor=\"end\">" << fmt(fy) << "</text>\n";
    }
    svg << "</g>\n"
        << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 15
        << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">alpha</text>\n"
        << "<text x=\"18\" y=\"" << top + ph / 2
        << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
        << top + ph / 2 << ")\">r = N/T</text>\n";

    svg << "<g class=\"contours\" fill=\"none\" stroke-width=\"1.5\">\n";
    for (std::size_t i = 0; i < contours.levels.size(); ++i) {
        const auto& lvl = contours.levels[i];
        for (const auto& line : lvl.polylines) {
            svg << "<polyline data-level=\"" << fmt(lvl.level) << "\" stroke=\""
                << palette[i % std::size(palette)] << "\" points=\"";
            for (std::size_t k = 0; k < line.size(); ++k)
                svg << (k ? " " : "") << fmt(sx(line[k].alpha)) << ',' << fmt(sy(line[k].r));
            svg << "\"/>\n";
        }
    }
    svg << "</g>\n";
    if (boundary && !boundary->points.empty()) {
        svg << "<polyline class=\"boundary\" fill=\"none\" stroke=\"black\" stroke-width=\"2\" "
               "stroke-dasharray=\"6 4\" points=\"";
        for (std::size_t k = 0; k < boundary->points.size(); ++k)
            svg << (k ? " " : "") << fmt(sx(boundary->points[k].alpha)) << ','
                << fmt(sy(boundary->points[k].r_star));
        svg << "\"/>\n";
    }

    svg << "<g class=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
    double ly = top + 10;
    for (std::size_t i = 0; i < contours.levels.size(); ++i, ly += 18) {
        const auto& lvl = contours.levels[i];
        svg << "<line x1=\"" << width - right + 15 << "\" y1=\"" << ly << "\" x2=\""
            << width - right + 40 << "\" y2=\"" << ly << "\" stroke=\""
            << palette[i % std::size(palette)] << "\" stroke-width=\"2\"/>\n"
            << "<text x=\"" << width - right + 46 << "\" y=\"" << ly + 4 << "\">delta = "
            << fmt(lvl.level) << (lvl.empty() ? " (no crossing)" : "") << "</text>\n";
    }
    if (boundary && !boundary->points.empty())
        svg << "<line x1=\"" << width - right + 15 << "\" y1=\"" << ly << "\" x2=\""
            << width - right + 40 << "\" y2=\"" << ly
            << "\" stroke=\"black\" stroke-width=\"2\" stroke-dasharray=\"6 4\"/>\n"
            << "<text x=\"" << width - right + 46 << "\" y=\"" << ly + 4
            << "\">phase boundary</text>\n";
    svg << "</g>\n</svg>\n";
    return svg.str();
}

}  // namespace esmap
