// Command-line front end: runs scenarios, analyzes trajectory logs, and
// sweeps parameter grids. Exit codes: 0 ok, 1 domain error (bad config,
// missing file, diverged run, schema mismatch), 2 usage error.

#include <CLI11.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "meso/config.hpp"
#include "meso/sim.hpp"
#include "meso/stability.hpp"

namespace fs = std::filesystem;

namespace {

struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

meso::RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DomainError("cannot open config file: " + path);
    return meso::load_run_config(in);
}

void write_manifest(const meso::RunConfig& rc, const std::string& config_path,
                    const fs::path& out_dir) {
    std::ofstream mf(out_dir / "manifest.cfg");
    mf << "# mesoplatoon " << meso::kVersion << "\n";
    mf << "# source config: " << config_path << "\n";
    meso::serialize(rc, mf);
}

void report_window(const meso::RunConfig& rc, const meso::TrajectoryLog& log, double& t0,
                   double& t1) {
    t0 = rc.window_t0 >= 0.0 ? rc.window_t0 : log.t.front();
    t1 = rc.window_t1 >= 0.0 ? rc.window_t1 : log.t.back();
}

void emit_reports(const meso::StabilityReport& rep, const meso::RunConfig& rc,
                  const std::string& config_path, const std::string& log_path,
                  const fs::path& out_dir) {
    {
        std::ofstream kv(out_dir / "summary.kv");
        kv << "version = " << meso::kVersion << "\n";
        kv << "source_config = " << config_path << "\n";
        kv << "source_log = " << log_path << "\n";
        kv << "seed = " << rc.scenario.ic.seed << "\n";
        kv << "dt = " << rc.scenario.dt << "\n";
        meso::write_report_kv(rep, kv);
    }
    {
        std::ofstream txt(out_dir / "report.txt");
        txt << "# mesoplatoon " << meso::kVersion << ", config " << config_path << ", log "
            << log_path << "\n";
        meso::write_report_text(rep, txt);
    }
}

int cmd_simulate(const std::string& config_path, const std::string& out_override,
                 long long seed_override, double dt_override, bool quiet_flag) {
    meso::RunConfig rc = load_config_file(config_path);
    if (!out_override.empty()) rc.out_dir = out_override;
    if (seed_override >= 0) rc.scenario.ic.seed = static_cast<std::uint64_t>(seed_override);
    if (dt_override > 0.0) rc.scenario.dt = dt_override;
    rc.scenario.validate();
    const bool quiet = quiet_flag || rc.verbosity == meso::LogVerbosity::Quiet;

    const meso::TrajectoryLog log = meso::simulate(rc.scenario);

    const fs::path out_dir(rc.out_dir);
    fs::create_directories(out_dir);
    const fs::path csv_path = out_dir / "trajectory.csv";
    {
        std::ofstream csv(csv_path);
        meso::write_csv(log, csv);
    }
    write_manifest(rc, config_path, out_dir);
    if (!quiet)
        std::cout << "wrote " << csv_path.string() << " (" << log.n_samples() << " rows, "
                  << log.n_vehicles() << " vehicles)\n";

    if (rc.analyze_after_simulate) {
        double t0 = 0.0, t1 = 0.0;
        report_window(rc, log, t0, t1);
        const auto rep = meso::analyze_log(log, rc.scenario.controller, rc.scenario.eq, t0, t1,
                                           rc.iss_tol);
        emit_reports(rep, rc, config_path, csv_path.string(), out_dir);
        if (!quiet) std::cout << "wrote " << (out_dir / "report.txt").string() << "\n";
    }
    return 0;
}

int cmd_analyze(const std::string& log_path, const std::string& config_path,
                const std::string& out_override, bool quiet_flag) {
    meso::RunConfig rc = load_config_file(config_path);
    if (!out_override.empty()) rc.out_dir = out_override;
    const bool quiet = quiet_flag || rc.verbosity == meso::LogVerbosity::Quiet;

    std::ifstream in(log_path);
    if (!in) throw DomainError("cannot open trajectory log: " + log_path);
    const meso::TrajectoryLog log = meso::read_csv(in);
    if (log.rho_dim != meso::rho_dim(rc.scenario.controller.policy))
        throw DomainError("trajectory log does not match the configured policy");

    double t0 = 0.0, t1 = 0.0;
    report_window(rc, log, t0, t1);
    const auto rep =
        meso::analyze_log(log, rc.scenario.controller, rc.scenario.eq, t0, t1, rc.iss_tol);
    const fs::path out_dir(rc.out_dir);
    fs::create_directories(out_dir);
    emit_reports(rep, rc, config_path, log_path, out_dir);
    if (!quiet) {
        meso::write_report_text(rep, std::cout);
        std::cout << "wrote " << (out_dir / "summary.kv").string() << "\n";
    }
    return 0;
}

struct SweepPoint {
    std::vector<double> values;
    meso::LyapunovConstants constants;
    bool simulated = false;
    meso::StringStabilityMetrics metrics;
};

int cmd_sweep(const std::string& config_path, const std::string& out_override, bool quiet_flag) {
    meso::RunConfig rc = load_config_file(config_path);
    if (!out_override.empty()) rc.out_dir = out_override;
    const bool quiet = quiet_flag || rc.verbosity == meso::LogVerbosity::Quiet;
    if (rc.sweep.axes.empty()) throw DomainError("sweep: no sweep axes declared in config");

    std::size_t total = 1;
    for (const auto& axis : rc.sweep.axes) total *= axis.values.size();
    if (total > rc.sweep.cap)
        throw DomainError("sweep: grid has " + std::to_string(total) +
                          " points, exceeding sweep.cap = " + std::to_string(rc.sweep.cap));

    std::vector<SweepPoint> points(total);
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex err_mutex;

    const auto worker = [&]() {
        for (;;) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= total || failed.load()) break;
            try {
                meso::RunConfig point_rc = rc;
                SweepPoint& pt = points[idx];
                std::size_t rem = idx;
                for (const auto& axis : rc.sweep.axes) {
                    const double v = axis.values[rem % axis.values.size()];
                    rem /= axis.values.size();
                    meso::apply_sweep_value(point_rc, axis.param, v);
                    pt.values.push_back(v);
                }
                point_rc.scenario.validate();
                pt.constants = meso::lyapunov_constants(point_rc.scenario.controller);
                if (rc.sweep.simulate) {
                    const auto log = meso::simulate(point_rc.scenario);
                    pt.metrics = meso::string_metrics(log, pt.constants, point_rc.scenario.eq);
                    pt.simulated = true;
                }
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!failed.exchange(true)) first_error = e.what();
            }
        }
    };
    const int n_workers = std::max(1, std::min<int>(rc.sweep.workers, static_cast<int>(total)));
    std::vector<std::thread> threads;
    for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (failed.load()) throw DomainError("sweep: " + first_error);

    const fs::path out_dir(rc.out_dir);
    fs::create_directories(out_dir);
    const fs::path csv_path = out_dir / "sweep.csv";
    {
        std::ofstream csv(csv_path);
        for (const auto& axis : rc.sweep.axes) csv << axis.param << ",";
        csv << "gamma_tilde,alpha,alpha_lower,alpha_upper,d,certificate_valid";
        if (rc.sweep.simulate) csv << ",peak,bound,within_bound,terminal_max";
        csv << "\n";
        char buf[32];
        const auto put = [&](double v) {
            std::snprintf(buf, sizeof buf, "%.9g", v);
            csv << buf;
        };
        for (const auto& pt : points) {
            for (double v : pt.values) {
                put(v);
                csv << ",";
            }
            put(pt.constants.gamma_tilde);
            csv << ",";
            put(pt.constants.alpha);
            csv << ",";
            put(pt.constants.alpha_lower);
            csv << ",";
            put(pt.constants.alpha_upper);
            csv << ",";
            put(pt.constants.d);
            csv << "," << (pt.constants.certificate_valid() ? 1 : 0);
            if (pt.simulated) {
                csv << ",";
                put(pt.metrics.platoon_peak);
                csv << ",";
                put(pt.metrics.bound);
                csv << "," << (pt.metrics.within_bound ? 1 : 0) << ",";
                put(pt.metrics.terminal_max);
            }
            csv << "\n";
        }
    }
    {
        std::ofstream kv(out_dir / "sweep.kv");
        kv << "version = " << meso::kVersion << "\n";
        kv << "source_config = " << config_path << "\n";
        kv << "seed = " << rc.scenario.ic.seed << "\n";
        kv << "dt = " << rc.scenario.dt << "\n";
        kv << "points = " << total << "\n";
        if (rc.sweep.simulate) {
            std::vector<meso::StringStabilityMetrics> ms;
            for (const auto& pt : points) ms.push_back(pt.metrics);
            const auto scal = meso::string_scaling(ms);
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.9g", scal.ratio);
            kv << "peak_ratio = " << buf << "\n";
            kv << "peaks_n_independent = " << (scal.n_independent() ? "true" : "false") << "\n";
        }
    }
    write_manifest(rc, config_path, out_dir);
    if (!quiet) std::cout << "wrote " << csv_path.string() << " (" << total << " points)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mesoscopic platoon simulation and stability analysis"};
    app.set_version_flag("--version", std::string("mesosim ") + meso::kVersion);
    app.require_subcommand(1);

    std::string config_path, log_path, out_dir;
    long long seed_override = -1;
    double dt_override = 0.0;
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "suppress progress output");

    auto* sim = app.add_subcommand("simulate", "run a scenario and write the trajectory CSV");
    sim->add_option("-c,--config", config_path, "run configuration file")->required();
    sim->add_option("-o,--out-dir", out_dir, "output directory (overrides run.out_dir)");
    sim->add_option("--seed", seed_override, "override scenario.seed");
    sim->add_option("--dt", dt_override, "override scenario.dt");

    auto* ana = app.add_subcommand("analyze", "compute the stability report for a trajectory");
    ana->add_option("-l,--log", log_path, "trajectory CSV produced by simulate")->required();
    ana->add_option("-c,--config", config_path, "run configuration file (parameters)")
        ->required();
    ana->add_option("-o,--out-dir", out_dir, "output directory (overrides run.out_dir)");

    auto* swp = app.add_subcommand("sweep", "evaluate a parameter grid");
    swp->add_option("-c,--config", config_path, "run configuration with sweep axes")->required();
    swp->add_option("-o,--out-dir", out_dir, "output directory (overrides run.out_dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        app.exit(e);
        return 2;
    }

    try {
        if (sim->parsed())
            return cmd_simulate(config_path, out_dir, seed_override, dt_override, quiet);
        if (ana->parsed()) return cmd_analyze(log_path, config_path, out_dir, quiet);
        if (swp->parsed()) return cmd_sweep(config_path, out_dir, quiet);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
