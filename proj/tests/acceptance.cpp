// Acceptance suite: exercises every top-level requirement end to end and
// prints one PASS/FAIL line per criterion. Scenarios come from the bundled
// config files so the CLI artifacts and this suite stay in lockstep.
// Exit status is the number of failed criteria.

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "meso/config.hpp"
#include "meso/sim.hpp"
#include "meso/stability.hpp"

using namespace meso;

namespace {

int failures = 0;

void report(int index, const char* name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", index, name,
                detail.c_str());
    if (!pass) ++failures;
}

RunConfig load(const char* file) {
    const std::string path = std::string(MESO_CONFIG_DIR) + "/" + file;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("missing bundled config: " + path);
    return load_run_config(in);
}

double max_error_at_time(const TrajectoryLog& log, double t, const EquilibriumSpec& eq) {
    std::size_t k = 0;
    while (k + 1 < log.n_samples() && log.t[k] < t - 1e-9) ++k;
    double m = 0.0;
    for (int i = 0; i < log.n_vehicles(); ++i) m = std::max(m, log.error_at(k, i, eq).norm());
    return m;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof buf, f, args);
    va_end(args);
    return buf;
}

}  // namespace

int main() {
    using clock = std::chrono::steady_clock;
    const auto seconds_since = [](clock::time_point t0) {
        return std::chrono::duration<double>(clock::now() - t0).count();
    };

    const RunConfig cfg_cp = load("paper_cp.cfg");
    const RunConfig cfg_vp = load("paper_vp.cfg");
    const RunConfig cfg_eq = load("equilibrium.cfg");
    const RunConfig cfg_conv_cp = load("convergence_cp.cfg");
    const RunConfig cfg_conv_vp = load("convergence_vp.cfg");
    const EquilibriumSpec eq = cfg_cp.scenario.eq;
    const ControllerParams p_cp = cfg_cp.scenario.controller;
    const ControllerParams p_vp = cfg_vp.scenario.controller;
    const LyapunovConstants c_cp = constants_cp(p_cp);
    const LyapunovConstants c_vp = constants_vp(p_vp);

    // 1. gamma_tilde reproduction
    {
        const bool ok_cp = std::abs(c_cp.gamma_tilde - 0.5237) <= 0.005;
        const bool ok_vp = std::abs(c_vp.gamma_tilde - 0.5) <= 1e-9;
        report(1, "gamma_tilde reproduction", ok_cp && ok_vp,
               fmt("cp %.10f vs 0.5237 +/- 0.005, vp %.12f vs 0.5 +/- 1e-9", c_cp.gamma_tilde,
                   c_vp.gamma_tilde));
    }

    // 2. certificate internals: Q diagonal minima
    {
        const auto cert_cp = certificate_matrices(p_cp);
        const auto cert_vp = certificate_matrices(p_vp);
        const bool ok = std::abs(cert_cp.q_diag_min - 1.5) <= 1e-12 &&
                        std::abs(cert_vp.q_diag_min - 2.0) <= 1e-12 &&
                        cert_cp.alpha_matches_diag_min && cert_vp.alpha_matches_diag_min;
        report(2, "certificate internals", ok,
               fmt("Q diag min cp %.15g (want 1.5), vp %.15g (want 2), both equal alpha",
                   cert_cp.q_diag_min, cert_vp.q_diag_min));
    }

    // 3. equilibrium preservation over the full horizon
    {
        const auto t0 = clock::now();
        const auto log = simulate(cfg_eq.scenario);
        double worst = 0.0;
        for (std::size_t k = 0; k < log.n_samples(); ++k)
            for (int i = 0; i < log.n_vehicles(); ++i)
                worst = std::max(worst, log.error_at(k, i, eq).norm());
        const double el = seconds_since(t0);
        report(3, "equilibrium preservation", worst <= 1e-9 && el < 5.0,
               fmt("max error %.3g (<= 1e-9), %.2f s (< 5 s)", worst, el));
    }

    // four-phase benchmark runs, reused below
    const auto log_cp = simulate(cfg_cp.scenario);
    const auto log_vp = simulate(cfg_vp.scenario);

    // 4. phase-1 convergence and quiet-run terminal error
    {
        const double e10_cp = max_error_at_time(log_cp, 10.0, eq);
        const double e10_vp = max_error_at_time(log_vp, 10.0, eq);
        const auto quiet_cp = simulate(cfg_conv_cp.scenario);
        const auto quiet_vp = simulate(cfg_conv_vp.scenario);
        const double e60_cp = max_error_at_time(quiet_cp, 60.0, eq);
        const double e60_vp = max_error_at_time(quiet_vp, 60.0, eq);
        const bool ok = e10_cp < 0.05 && e10_vp < 0.05 && e60_cp < 1e-3 && e60_vp < 1e-3;
        report(4, "phase-1 convergence", ok,
               fmt("|err(10s)| cp %.3g vp %.3g (< 0.05); quiet |err(60s)| cp %.3g vp %.3g "
                   "(< 1e-3)",
                   e10_cp, e10_vp, e60_cp, e60_vp));
    }

    // 5. theorem bound and platoon-length independence
    {
        const auto t0 = clock::now();
        bool within = true;
        double worst_ratio = 0.0;
        for (const RunConfig* base : {&cfg_conv_cp, &cfg_conv_vp}) {
            const auto c = lyapunov_constants(base->scenario.controller);
            std::vector<StringStabilityMetrics> ms;
            for (int n : {6, 16, 31}) {
                Scenario sc = base->scenario;
                sc.n_vehicles = n;
                ms.push_back(string_metrics(simulate(sc), c, eq));
                within = within && ms.back().within_bound;
            }
            worst_ratio = std::max(worst_ratio, string_scaling(ms).ratio);
        }
        const double el = seconds_since(t0);
        report(5, "theorem bound and N-independence", within && worst_ratio <= 1.1 && el < 30.0,
               fmt("all peaks within bound %s, peak ratio across N %.4f (<= 1.1), %.1f s "
                   "(< 30 s)",
                   within ? "yes" : "NO", worst_ratio, el));
    }

    // 6. ISS conditional decrease along the four-phase runs
    {
        const auto iss_cp = iss_trajectory_check(log_cp, c_cp, p_cp, eq, 1e-6);
        const auto iss_vp = iss_trajectory_check(log_vp, c_vp, p_vp, eq, 1e-6);
        auto bad_c = c_cp;
        bad_c.upsilon = 1.5;
        auto bad_p = p_cp;
        bad_p.upsilon = 1.5;
        const auto iss_neg = iss_trajectory_check(log_cp, bad_c, bad_p, eq, 1e-6);
        double vp_excess = 0.0;
        for (const auto& v : iss_vp.violations) vp_excess = std::max(vp_excess, v.wdot - v.bound);
        const bool ok = iss_cp.violations.empty() && iss_vp.violations.empty() &&
                        iss_neg.flag_count() >= 1;
        report(6, "ISS decrease condition", ok,
               fmt("cp violations %zu/%zu; vp violations %zu/%zu (max excess %.3g); negative "
                   "control flags %zu",
                   iss_cp.violations.size(), iss_cp.points_in_region, iss_vp.violations.size(),
                   iss_vp.points_in_region, vp_excess, iss_neg.flag_count()));
    }

    // 7. lemma envelopes and the variance property on random samples
    {
        std::mt19937 gen(2024);
        std::uniform_real_distribution<double> dp(-30.0, -10.0), dv(-3.0, 3.0), u(-50.0, 50.0);
        std::vector<std::vector<CarFollowingState>> history;
        for (int s = 0; s < 1000; ++s) {
            std::vector<CarFollowingState> pairs(1 + gen() % 16);
            for (auto& c : pairs) c = {dp(gen), dv(gen)};
            history.push_back(std::move(pairs));
        }
        const auto viol = check_lemma2_bounds(history, p_cp.rho, eq);
        bool var_ok = true;
        for (int s = 0; s < 1000; ++s) {
            std::vector<double> vals(1 + gen() % 40);
            for (auto& v : vals) v = u(gen);
            var_ok = var_ok && check_variance_property(vals);
        }
        report(7, "lemma suite", viol.empty() && var_ok,
               fmt("lemma-2 violations %zu over 1000 samples; variance property %s over 1000 "
                   "lists",
                   viol.size(), var_ok ? "holds" : "FAILS"));
    }

    // 8. attenuation orderings in the phase-4 window
    {
        const auto at_cp = attenuation_profile(log_cp, 35.0, 60.0);
        const auto at_vp = attenuation_profile(log_vp, 35.0, 60.0);
        const auto gap_cp = window_peak_gap_error(log_cp, eq, 35.0, 60.0);
        const auto gap_vp = window_peak_gap_error(log_vp, eq, 35.0, 60.0);
        double tail_cp = 0.0, tail_vp = 0.0;
        const int n = log_cp.n_vehicles();
        for (int i = n - n / 3; i < n; ++i) {
            tail_cp = std::max(tail_cp, gap_cp[static_cast<std::size_t>(i)]);
            tail_vp = std::max(tail_vp, gap_vp[static_cast<std::size_t>(i)]);
        }
        const bool ok = at_cp.peak_dv.back() < at_cp.peak_dv.front() &&
                        at_vp.peak_dv.back() < at_vp.peak_dv.front() && tail_vp <= tail_cp;
        report(8, "attenuation", ok,
               fmt("|dv| peaks cp %.3f->%.3f, vp %.3f->%.3f (last < first); tail gap "
                   "excursions vp %.4f <= cp %.4f",
                   at_cp.peak_dv.front(), at_cp.peak_dv.back(), at_vp.peak_dv.front(),
                   at_vp.peak_dv.back(), tail_vp, tail_cp));
    }

    // 9. integrator order on the smooth initial window
    {
        Scenario sc = cfg_conv_cp.scenario;
        sc.n_vehicles = 8;
        sc.t_end = 4.0;
        sc.ic = {49, 0.5, 0.25};
        const auto res = integrator_order_check(sc);
        const bool ok = res.ratio >= 8.0 && res.window_end >= 1.0;
        report(9, "integrator order", ok,
               fmt("halving ratio %.2f (>= 8) on the event-free window [0, %.2f] s", res.ratio,
                   res.window_end));
    }

    std::printf("acceptance: %d/9 criteria passed\n", 9 - failures);
    return failures;
}
