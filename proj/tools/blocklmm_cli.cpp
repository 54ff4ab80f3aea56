// Command-line interface: fit, block inspection, and objective benchmarks
// over CSV inputs.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "blocklmm/blocklmm.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<double> parse_theta_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    return out;
}

struct CommonArgs {
    std::string formula;
    std::string data_path;
    bool no_sort = false;
};

blocklmm::Model load_model(const CommonArgs& args) {
    auto ast = blocklmm::parse_formula(args.formula);
    auto table = blocklmm::load_csv(args.data_path);
    return blocklmm::make_model(ast, table, !args.no_sort);
}

int cmd_fit(const CommonArgs& common, const blocklmm::FitOptions& opts, const std::string& json_path,
            bool show_modes, bool verbose) {
    auto model = load_model(common);

    blocklmm::FitOptions o = opts;
    if (verbose) {
        o.progress = [](int n, std::span<const double> theta, double obj) {
            std::fprintf(stderr, "eval %4d  obj %.7f  theta", n, obj);
            for (double t : theta) std::fprintf(stderr, " %.6f", t);
            std::fprintf(stderr, "\n");
        };
    }
    auto result = blocklmm::fit(model, o);

    const auto j = blocklmm::to_json(result, model);
    std::cout << blocklmm::render_report(j);
    if (result.perfect_fit)
        std::cout << "warning: perfect fit (zero residual); sigma^2 estimated as 0\n";

    if (!json_path.empty()) {
        std::ofstream out(json_path);
        out << j.dump(2) << "\n";
    }
    if (show_modes) {
        auto modes = blocklmm::conditional_modes(model, result.reml);
        for (std::size_t i = 0; i < modes.size(); ++i) {
            std::cout << "\nConditional modes for " << model.terms[i].grouping << ":\n";
            const auto& rm = model.terms[i];
            for (Eigen::Index g = 0; g < rm.nlevels(); ++g) {
                std::cout << "  " << rm.levels[g];
                for (Eigen::Index c = 0; c < modes[i].cols(); ++c)
                    std::cout << "  " << modes[i](g, c);
                std::cout << "\n";
            }
        }
    }
    return result.converged ? 0 : 2;
}

int cmd_blocks(const CommonArgs& common) {
    auto model = load_model(common);
    std::cout << blocklmm::block_description(model.A, model.L, model.terms);
    std::cout << "\nnnz(A) = " << blocklmm::nnz_A(model) << "\n";
    std::cout << "nnz(L) = " << blocklmm::nnz_L(model) << "\n\n";
    std::cout << "footprint (bytes):\n";
    const auto k = model.A.k;
    for (Eigen::Index i = 0; i <= k; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) {
            std::printf("  [%lld,%lld]  A %12lld   L %12lld\n", static_cast<long long>(i + 1),
                        static_cast<long long>(j + 1),
                        static_cast<long long>(blocklmm::storage_bytes(model.A.grid.at(i, j))),
                        static_cast<long long>(blocklmm::storage_bytes(model.L.at(i, j))));
        }
    std::cout << "  total " << blocklmm::footprint_bytes(model) << "\n";
    return 0;
}

int cmd_bench(const CommonArgs& common, int evals, bool no_fit, const std::string& csv_path) {
    auto model = load_model(common);

    std::vector<double> theta = blocklmm::initial_theta(model.templates);
    double fit_seconds = -1;
    if (!no_fit) {
        const auto t0 = Clock::now();
        auto result = blocklmm::fit(model);
        fit_seconds = ms_since(t0) / 1000.0;
        theta = result.theta;
        std::printf("fit: %.3f s (%d evaluations)\n", fit_seconds, result.n_evals);
    }

    std::vector<double> times;
    for (int e = 0; e < evals; ++e) {
        const auto t0 = Clock::now();
        blocklmm::update_L(model, theta);
        volatile double obj = blocklmm::objective(model);
        (void)obj;
        times.push_back(ms_since(t0));
    }
    std::sort(times.begin(), times.end());
    const double median = times[times.size() / 2];
    std::printf("objective evaluation over %d runs: min %.3f ms, median %.3f ms\n", evals, times[0],
                median);

    if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        out << "evals,min_ms,median_ms,fit_s\n";
        out << evals << "," << times[0] << "," << median << "," << fit_seconds << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Linear mixed-effects models via blocked Cholesky factorization"};
    app.require_subcommand(1);

    CommonArgs common;
    blocklmm::FitOptions fit_opts;
    std::string json_path, seed_theta, bench_csv;
    bool show_modes = false, verbose = false, no_fit = false;
    int bench_evals = 50;

    auto add_common = [&](CLI::App* sub, bool with_sort_flag) {
        sub->add_option("--formula", common.formula, "model formula")->required();
        sub->add_option("--data", common.data_path, "CSV input path")->required();
        if (with_sort_flag)
            sub->add_flag("--no-sort", common.no_sort, "keep formula term order (no q-descending sort)");
    };

    auto* fit_cmd = app.add_subcommand("fit", "fit a model and print the report");
    add_common(fit_cmd, true);
    fit_cmd->add_flag("--reml", fit_opts.reml, "use the REML criterion");
    fit_cmd->add_option("--maxevals", fit_opts.max_evals, "objective evaluation budget");
    fit_cmd->add_option("--ftol", fit_opts.ftol_abs, "absolute objective tolerance");
    fit_cmd->add_option("--json", json_path, "write the fit result as JSON");
    fit_cmd->add_flag("--modes", show_modes, "print conditional modes");
    fit_cmd->add_option("--seed-theta", seed_theta, "comma-separated initial theta");
    fit_cmd->add_flag("--verbose", verbose, "log each objective evaluation");

    auto* blocks_cmd = app.add_subcommand("blocks", "show block structure, nnz and footprint");
    add_common(blocks_cmd, true);

    auto* bench_cmd = app.add_subcommand("bench", "time objective evaluations");
    add_common(bench_cmd, true);
    bench_cmd->add_option("--evals", bench_evals, "number of timed evaluations");
    bench_cmd->add_flag("--no-fit", no_fit, "bench at the initial theta without fitting first");
    bench_cmd->add_option("--csv", bench_csv, "write timings as CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        if (!seed_theta.empty()) fit_opts.initial_theta = parse_theta_list(seed_theta);
        if (fit_cmd->parsed()) return cmd_fit(common, fit_opts, json_path, show_modes, verbose);
        if (blocks_cmd->parsed()) return cmd_blocks(common);
        if (bench_cmd->parsed()) return cmd_bench(common, bench_evals, no_fit, bench_csv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
