#include <iostream>

#include <CLI11.hpp>

#include "esmap/cli.hpp"

int main(int argc, char** argv) {
    using esmap::cli::Command;

    CLI::App app{"Monte Carlo contour maps of Expected Shortfall estimation error"};
    app.require_subcommand(1);

    esmap::cli::Invocation inv;
    std::size_t workers = 0;
    std::string cache_dir;

    const std::pair<Command, const char*> commands[] = {
        {Command::Simulate, "Run one Monte Carlo cell, or optimise ES on a returns CSV"},
        {Command::Sweep, "Sweep the (alpha, r) grid and write grid.csv"},
        {Command::Contour, "Extract iso-delta contours into contours.json"},
        {Command::Boundary, "Fit the phase boundary into boundary.json"},
        {Command::Render, "Draw contours and boundary into map.svg"},
    };
    for (const auto& [cmd, help] : commands) {
        auto* sub = app.add_subcommand(std::string(esmap::cli::to_string(cmd)), help);
        sub->add_option("--config", inv.config, "JSON run configuration")->required();
        sub->add_option("--workers", workers, "Worker threads (overrides ESMAP_WORKERS)")
            ->check(CLI::PositiveNumber);
        sub->add_flag("--overwrite", inv.overwrite, "Replace existing outputs");
        sub->add_option("--cache-dir", cache_dir, "Cell cache directory");
        sub->callback([&inv, cmd = cmd] { inv.command = cmd; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    if (workers > 0) inv.workers = workers;
    if (!cache_dir.empty()) inv.cache_dir = cache_dir;
    return esmap::cli::run(inv, std::cerr);
}
