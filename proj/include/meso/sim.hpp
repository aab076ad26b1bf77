#pragma once

// Deterministic fixed-step integration of the closed-loop platoon.
//
// The pair states and filter states are the integrated state of record; the
// virtual leader is a schedule, not a state. A reference-speed step at a grid
// point enters as a jump of dv_0; logged rows always show the left limit of
// the state at their time stamp.
//
// Information model per step: every vehicle's command is computed from its
// own pair state, its filter state and the aggregate of its predecessors;
// the feedforward term is the predecessor's *commanded* acceleration
// (saturated to the actuation envelope before broadcast), while the plant
// physics use the *applied* acceleration, i.e. command plus external
// disturbance, saturated. Disturbances are never communicated.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "meso/aggregates.hpp"
#include "meso/control.hpp"
#include "meso/core.hpp"

namespace meso {

struct SpeedBreakpoint {
    double t = 0.0;
    double v = 0.0;
};

enum class DisturbanceKind { Pulse, Sinusoid };

// External acceleration input on one vehicle, active on [t_start, t_end).
struct Disturbance {
    int target = 0;
    DisturbanceKind kind = DisturbanceKind::Pulse;
    double amplitude = 0.0;  // [m/s^2]
    double t_start = 0.0;
    double t_end = 0.0;
    double frequency = 0.0;  // [rad/s], sinusoid only

    double value_at(double t) const {
        if (t < t_start || t >= t_end) return 0.0;
        if (kind == DisturbanceKind::Pulse) return amplitude;
        return amplitude * std::sin(frequency * (t - t_start));
    }
};

// Seeded uniform neighborhood of the equilibrium.
struct InitialConditionSpec {
    std::uint64_t seed = 0;
    double dp_halfwidth = 0.0;  // [m]
    double dv_halfwidth = 0.0;  // [m/s]
};

// Whether the aggregates are re-evaluated at every integrator stage or held
// at their step-start value across one step.
enum class PsiRefresh { PerStage, PerStep };

struct Scenario {
    int n_vehicles = 31;  // N+1
    double dt = 0.01;
    double t_end = 60.0;
    std::vector<SpeedBreakpoint> speed_schedule{{0.0, 14.0}};
    std::vector<Disturbance> disturbances;
    InitialConditionSpec ic;
    Limits limits;
    ControllerParams controller;
    EquilibriumSpec eq;
    PsiRefresh psi_refresh = PsiRefresh::PerStage;

    void validate() const;
    std::size_t n_steps() const;
};

// Piecewise-constant lookup over left-closed intervals; times before the
// first breakpoint return the first value.
inline double reference_speed_at(std::span<const SpeedBreakpoint> schedule, double t) {
    if (schedule.empty()) throw std::invalid_argument("reference_speed_at: empty schedule");
    double v = schedule.front().v;
    for (const auto& bp : schedule) {
        if (t >= bp.t) v = bp.v;
        else break;
    }
    return v;
}

// Deterministic uniform generator. The engine-to-double mapping is spelled
// out here so draws are identical across standard library implementations.
class UniformRng {
  public:
    explicit UniformRng(std::uint64_t seed) : eng_(seed) {}

    double next_unit() {  // [0, 1)
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double next(double lo, double hi) { return lo + next_unit() * (hi - lo); }

  private:
    std::mt19937_64 eng_;
};

// Pair states drawn uniformly around the equilibrium; the filter state of
// every vehicle starts at zero.
inline std::vector<CarFollowingState> draw_initial_conditions(const InitialConditionSpec& spec,
                                                              const EquilibriumSpec& eq, int n) {
    if (n <= 0) throw std::invalid_argument("draw_initial_conditions: n must be positive");
    UniformRng rng(spec.seed);
    std::vector<CarFollowingState> out(static_cast<std::size_t>(n));
    for (auto& c : out) {
        c.dp = rng.next(-eq.dp_bar - spec.dp_halfwidth, -eq.dp_bar + spec.dp_halfwidth);
        c.dv = rng.next(-spec.dv_halfwidth, spec.dv_halfwidth);
    }
    return out;
}

struct SimulationDiverged : std::runtime_error {
    SimulationDiverged(std::size_t step_, double t_, int vehicle_)
        : std::runtime_error("simulation diverged at step " + std::to_string(step_) + " (t=" +
                             std::to_string(t_) + " s), vehicle " + std::to_string(vehicle_)),
          step(step_),
          t(t_),
          vehicle(vehicle_) {}
    std::size_t step;
    double t;
    int vehicle;
};

// Column-per-vehicle time series of one run.
struct TrajectoryLog {
    struct Series {
        std::vector<double> dp, dv, rho1, rho2, u_cmd, u_app, psi_dp, psi_dv;
    };

    double dt = 0.0;
    int rho_dim = 1;
    std::vector<double> t;
    std::vector<double> v_ref;
    std::vector<Series> veh;

    std::size_t n_samples() const { return t.size(); }
    int n_vehicles() const { return static_cast<int>(veh.size()); }

    CarFollowingState pair_at(std::size_t sample, int i) const {
        const auto& s = veh[static_cast<std::size_t>(i)];
        return {s.dp[sample], s.dv[sample]};
    }

    PairError error_at(std::size_t sample, int i, const EquilibriumSpec& eq) const {
        const auto& s = veh[static_cast<std::size_t>(i)];
        return {s.dp[sample] + eq.dp_bar, s.dv[sample], s.rho1[sample],
                rho_dim == 2 ? s.rho2[sample] : 0.0};
    }
};

inline void Scenario::validate() const {
    if (n_vehicles < 2) throw std::invalid_argument("Scenario: need at least 2 vehicles (N >= 1)");
    if (!(dt > 0.0)) throw std::invalid_argument("Scenario: dt must be positive");
    if (!(t_end > 0.0)) throw std::invalid_argument("Scenario: t_end must be positive");
    const double steps = t_end / dt;
    if (std::abs(steps - std::round(steps)) > 1e-6)
        throw std::invalid_argument("Scenario: t_end must be an integer multiple of dt");
    if (speed_schedule.empty()) throw std::invalid_argument("Scenario: empty speed schedule");
    for (std::size_t k = 0; k + 1 < speed_schedule.size(); ++k)
        if (!(speed_schedule[k].t < speed_schedule[k + 1].t))
            throw std::invalid_argument("Scenario: schedule times must be strictly increasing");
    for (const auto& bp : speed_schedule)
        if (!std::isfinite(bp.v) || bp.v < 0.0)
            throw std::invalid_argument("Scenario: schedule speeds must be finite and >= 0");
    for (const auto& d : disturbances) {
        if (!(d.t_start < d.t_end))
            throw std::invalid_argument("Scenario: disturbance needs t_start < t_end");
        if (!std::isfinite(d.amplitude))
            throw std::invalid_argument("Scenario: disturbance amplitude must be finite");
        if (d.target < 0 || d.target >= n_vehicles)
            throw std::invalid_argument("Scenario: disturbance target out of range");
    }
    if (!(ic.dp_halfwidth >= 0.0) || !(ic.dv_halfwidth >= 0.0))
        throw std::invalid_argument("Scenario: IC halfwidths must be non-negative");
    if (!(ic.dp_halfwidth < eq.dp_bar))
        throw std::invalid_argument("Scenario: dp halfwidth must keep initial gaps positive");
    limits.validate();
    eq.validate();
    controller.validate();
}

inline std::size_t Scenario::n_steps() const {
    return static_cast<std::size_t>(std::llround(t_end / dt));
}

namespace detail {

// Scratch space and stateless helpers for one integration run. Layout of the
// flat state vector: per vehicle [dp, dv, rho1(, rho2)].
struct Engine {
    const Scenario& sc;
    int n;
    int rdim;
    int blk;

    std::vector<CarFollowingState> pairs;
    std::vector<PsiPair> psi_prev;  // aggregate seen by vehicle i
    std::vector<double> u_cmd, u_app;

    explicit Engine(const Scenario& s)
        : sc(s),
          n(s.n_vehicles),
          rdim(rho_dim(s.controller.policy)),
          blk(2 + rdim),
          pairs(static_cast<std::size_t>(s.n_vehicles)),
          psi_prev(static_cast<std::size_t>(s.n_vehicles)),
          u_cmd(static_cast<std::size_t>(s.n_vehicles)),
          u_app(static_cast<std::size_t>(s.n_vehicles)) {}

    std::size_t at(int i, int c) const { return static_cast<std::size_t>(i * blk + c); }

    void load_pairs(std::span<const double> y) {
        for (int i = 0; i < n; ++i) pairs[static_cast<std::size_t>(i)] = {y[at(i, 0)], y[at(i, 1)]};
    }

    // psi_prev[i] = psi over pairs 0..i-1 (zero for the head vehicle).
    void compute_psi(std::span<const double> y) {
        load_pairs(y);
        psi_prev[0] = PsiPair{};
        for (int i = 1; i < n; ++i) {
            const std::span<const CarFollowingState> prefix(pairs.data(),
                                                            static_cast<std::size_t>(i));
            psi_prev[static_cast<std::size_t>(i)] =
                psi(aggregate_stats(prefix), sc.eq, sc.controller.rho);
        }
    }

    double disturbance_at(double t, int i) const {
        double w = 0.0;
        for (const auto& d : sc.disturbances)
            if (d.target == i) w += d.value_at(t);
        return w;
    }

    // Closed-loop field evaluation. `frozen` supplies the step-start psi in
    // PerStep mode; when null the aggregates are recomputed from y.
    void field(double t, std::span<const double> y, const std::vector<PsiPair>* frozen,
               std::span<double> dy) {
        if (frozen) {
            load_pairs(y);
            psi_prev = *frozen;
        } else {
            compute_psi(y);
        }
        const double a_max = sc.limits.a_max;
        double u_ff = 0.0;  // virtual leader never accelerates
        for (int i = 0; i < n; ++i) {
            const std::size_t ui = static_cast<std::size_t>(i);
            const std::array<double, 2> rho{y[at(i, 2)], rdim == 2 ? y[at(i, 3)] : 0.0};
            const ControlDecision dec =
                evaluate_control(pairs[ui], rho, psi_prev[ui], u_ff, sc.controller, sc.eq);
            u_cmd[ui] = std::clamp(dec.u_cmd, -a_max, a_max);
            u_app[ui] = std::clamp(u_cmd[ui] + disturbance_at(t, i), -a_max, a_max);
            u_ff = u_cmd[ui];
        }
        double u_app_prev = 0.0;
        for (int i = 0; i < n; ++i) {
            const std::size_t ui = static_cast<std::size_t>(i);
            dy[at(i, 0)] = pairs[ui].dv;
            dy[at(i, 1)] = u_app[ui] - u_app_prev;
            const std::array<double, 2> rho{y[at(i, 2)], rdim == 2 ? y[at(i, 3)] : 0.0};
            if (rdim == 1) {
                dy[at(i, 2)] = rho_derivative_cp(rho[0], psi_prev[ui], sc.controller.rho);
            } else {
                const auto dr = rho_derivative_vp(rho, psi_prev[ui], sc.controller.rho);
                dy[at(i, 2)] = dr[0];
                dy[at(i, 3)] = dr[1];
            }
            u_app_prev = u_app[ui];
        }
    }
};

}  // namespace detail

// Runs the scenario and returns the sampled trajectory. Deterministic for a
// fixed scenario (including seed); throws SimulationDiverged on blow-up.
inline TrajectoryLog simulate(const Scenario& sc) {
    sc.validate();
    detail::Engine eng(sc);
    const int n = eng.n;
    const int blk = eng.blk;
    const std::size_t dim = static_cast<std::size_t>(n * blk);
    const std::size_t steps = sc.n_steps();

    std::vector<double> y(dim, 0.0);
    {
        const auto ics = draw_initial_conditions(sc.ic, sc.eq, n);
        for (int i = 0; i < n; ++i) {
            y[eng.at(i, 0)] = ics[static_cast<std::size_t>(i)].dp;
            y[eng.at(i, 1)] = ics[static_cast<std::size_t>(i)].dv;
        }
    }

    TrajectoryLog log;
    log.dt = sc.dt;
    log.rho_dim = eng.rdim;
    log.t.reserve(steps + 1);
    log.v_ref.reserve(steps + 1);
    log.veh.resize(static_cast<std::size_t>(n));
    for (auto& s : log.veh) {
        s.dp.reserve(steps + 1);
        s.dv.reserve(steps + 1);
        s.rho1.reserve(steps + 1);
        if (eng.rdim == 2) s.rho2.reserve(steps + 1);
        s.u_cmd.reserve(steps + 1);
        s.u_app.reserve(steps + 1);
        s.psi_dp.reserve(steps + 1);
        s.psi_dv.reserve(steps + 1);
    }

    std::vector<double> k1(dim), k2(dim), k3(dim), k4(dim), yw(dim);
    std::vector<double> v_abs(static_cast<std::size_t>(n));
    std::vector<PsiPair> frozen;

    // Left-limit sample of the current state; control columns are evaluated
    // from the logged state itself.
    const auto log_row = [&](double t) {
        eng.field(t, y, nullptr, k1);  // k1 is scratch here
        log.t.push_back(t);
        log.v_ref.push_back(reference_speed_at(sc.speed_schedule, t));
        for (int i = 0; i < n; ++i) {
            const std::size_t ui = static_cast<std::size_t>(i);
            auto& s = log.veh[ui];
            s.dp.push_back(y[eng.at(i, 0)]);
            s.dv.push_back(y[eng.at(i, 1)]);
            s.rho1.push_back(y[eng.at(i, 2)]);
            if (eng.rdim == 2) s.rho2.push_back(y[eng.at(i, 3)]);
            s.u_cmd.push_back(eng.u_cmd[ui]);
            s.u_app.push_back(eng.u_app[ui]);
            s.psi_dp.push_back(eng.psi_prev[ui].psi_dp);
            s.psi_dv.push_back(eng.psi_prev[ui].psi_dv);
        }
    };

    double vbar = reference_speed_at(sc.speed_schedule, 0.0);
    const auto abs_speeds = [&](std::span<const double> yy) {
        double v = vbar;
        for (int i = 0; i < n; ++i) {
            v += yy[eng.at(i, 1)];
            v_abs[static_cast<std::size_t>(i)] = v;
        }
    };

    for (std::size_t step = 0; step < steps; ++step) {
        const double t = static_cast<double>(step) * sc.dt;
        log_row(t);

        // Reference-speed steps arrive as jumps of dv_0.
        const double vb_new = reference_speed_at(sc.speed_schedule, t);
        if (vb_new != vbar) {
            y[eng.at(0, 1)] += vbar - vb_new;
            vbar = vb_new;
        }

        const double h = sc.dt;
        const std::vector<PsiPair>* fz = nullptr;
        if (sc.psi_refresh == PsiRefresh::PerStep) {
            // Freeze the aggregates of the step-start state for all stages.
            eng.compute_psi(y);
            frozen = eng.psi_prev;
            fz = &frozen;
        }
        eng.field(t, y, fz, k1);
        for (std::size_t j = 0; j < dim; ++j) yw[j] = y[j] + 0.5 * h * k1[j];
        eng.field(t + 0.5 * h, yw, fz, k2);
        for (std::size_t j = 0; j < dim; ++j) yw[j] = y[j] + 0.5 * h * k2[j];
        eng.field(t + 0.5 * h, yw, fz, k3);
        for (std::size_t j = 0; j < dim; ++j) yw[j] = y[j] + h * k3[j];
        eng.field(t + h, yw, fz, k4);

        std::vector<double>& y_next = yw;
        for (std::size_t j = 0; j < dim; ++j)
            y_next[j] = y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);

        // Project absolute speeds onto [v_min, v_max]; only touched pairs are
        // rewritten so the common case stays bit-exact.
        abs_speeds(y_next);
        bool clamped_any = false;
        for (int i = 0; i < n; ++i) {
            const double v = v_abs[static_cast<std::size_t>(i)];
            if (v < sc.limits.v_min || v > sc.limits.v_max) {
                clamped_any = true;
                break;
            }
        }
        if (clamped_any) {
            std::vector<double> v_old_start(static_cast<std::size_t>(n));
            abs_speeds(y);  // speeds at step start, for effective accelerations
            v_old_start = v_abs;
            abs_speeds(y_next);
            double prev_raw = vbar, prev_clamped = vbar;
            for (int i = 0; i < n; ++i) {
                const std::size_t ui = static_cast<std::size_t>(i);
                const double raw = v_abs[ui];
                const double cl = std::clamp(raw, sc.limits.v_min, sc.limits.v_max);
                if (cl != raw || prev_clamped != prev_raw)
                    y_next[eng.at(i, 1)] = cl - prev_clamped;
                if (cl != raw)
                    log.veh[ui].u_app.back() = (cl - v_old_start[ui]) / h;
                prev_raw = raw;
                prev_clamped = cl;
            }
        }

        for (int i = 0; i < n; ++i)
            for (int c = 0; c < blk; ++c) {
                const double v = y_next[eng.at(i, c)];
                if (!std::isfinite(v) || std::abs(v) > 1e9)
                    throw SimulationDiverged(step, t, i);
            }

        y.swap(y_next);
    }

    log_row(static_cast<double>(steps) * sc.dt);
    return log;
}

// ---------------------------------------------------------------------------
// CSV serialization. Header: t,v_ref then per vehicle dp_i,dv_i,rho1_i
// [,rho2_i],u_cmd_i,u_app_i. Values are written with 9 significant digits.

inline void write_csv(const TrajectoryLog& log, std::ostream& os) {
    os << "t,v_ref";
    for (int i = 0; i < log.n_vehicles(); ++i) {
        os << ",dp_" << i << ",dv_" << i << ",rho1_" << i;
        if (log.rho_dim == 2) os << ",rho2_" << i;
        os << ",u_cmd_" << i << ",u_app_" << i;
    }
    os << "\n";
    char buf[32];
    const auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.9g", v);
        os << buf;
    };
    for (std::size_t k = 0; k < log.n_samples(); ++k) {
        put(log.t[k]);
        os << ',';
        put(log.v_ref[k]);
        for (int i = 0; i < log.n_vehicles(); ++i) {
            const auto& s = log.veh[static_cast<std::size_t>(i)];
            os << ',';
            put(s.dp[k]);
            os << ',';
            put(s.dv[k]);
            os << ',';
            put(s.rho1[k]);
            if (log.rho_dim == 2) {
                os << ',';
                put(s.rho2[k]);
            }
            os << ',';
            put(s.u_cmd[k]);
            os << ',';
            put(s.u_app[k]);
        }
        os << "\n";
    }
}

struct CsvSchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline TrajectoryLog read_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw CsvSchemaError("trajectory csv: empty file");
    std::vector<std::string> cols;
    {
        std::size_t start = 0;
        while (start <= line.size()) {
            std::size_t end = line.find(',', start);
            if (end == std::string::npos) end = line.size();
            cols.push_back(line.substr(start, end - start));
            start = end + 1;
        }
    }
    if (cols.size() < 7 || cols[0] != "t" || cols[1] != "v_ref")
        throw CsvSchemaError("trajectory csv: unexpected header");
    const bool has_rho2 = cols.size() > 5 && cols[5] == "rho2_0";
    const std::size_t per_veh = has_rho2 ? 6 : 5;
    if ((cols.size() - 2) % per_veh != 0)
        throw CsvSchemaError("trajectory csv: column count does not match schema");
    const int n = static_cast<int>((cols.size() - 2) / per_veh);
    for (int i = 0; i < n; ++i) {
        const std::size_t base = 2 + static_cast<std::size_t>(i) * per_veh;
        const std::string sfx = "_" + std::to_string(i);
        const bool ok = cols[base] == "dp" + sfx && cols[base + 1] == "dv" + sfx &&
                        cols[base + 2] == "rho1" + sfx &&
                        (!has_rho2 || cols[base + 3] == "rho2" + sfx) &&
                        cols[base + per_veh - 2] == "u_cmd" + sfx &&
                        cols[base + per_veh - 1] == "u_app" + sfx;
        if (!ok) throw CsvSchemaError("trajectory csv: unexpected header column near vehicle " +
                                      std::to_string(i));
    }

    TrajectoryLog log;
    log.rho_dim = has_rho2 ? 2 : 1;
    log.veh.resize(static_cast<std::size_t>(n));
    std::vector<double> row(cols.size());
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::size_t start = 0;
        for (std::size_t c = 0; c < row.size(); ++c) {
            std::size_t end = line.find(',', start);
            if (end == std::string::npos) end = line.size();
            const char* first = line.data() + start;
            const char* last = line.data() + end;
            const auto res = std::from_chars(first, last, row[c]);
            if (res.ec != std::errc{} || res.ptr != last)
                throw CsvSchemaError("trajectory csv: bad value at line " +
                                     std::to_string(line_no));
            if (end == line.size() && c + 1 < row.size())
                throw CsvSchemaError("trajectory csv: short row at line " +
                                     std::to_string(line_no));
            start = end + 1;
        }
        log.t.push_back(row[0]);
        log.v_ref.push_back(row[1]);
        for (int i = 0; i < n; ++i) {
            const std::size_t base = 2 + static_cast<std::size_t>(i) * per_veh;
            auto& s = log.veh[static_cast<std::size_t>(i)];
            s.dp.push_back(row[base]);
            s.dv.push_back(row[base + 1]);
            s.rho1.push_back(row[base + 2]);
            if (has_rho2) s.rho2.push_back(row[base + 3]);
            s.u_cmd.push_back(row[base + per_veh - 2]);
            s.u_app.push_back(row[base + per_veh - 1]);
        }
    }
    if (log.t.size() >= 2) log.dt = log.t[1] - log.t[0];
    return log;
}

}  // namespace meso
