#pragma once

// Flat, human-editable run configuration with dotted keys:
//
//   scenario.n_vehicles = 31
//   controller.policy = constant-spacing
//   schedule.0.t = 0
//   schedule.0.v = 14
//   disturbance.0.kind = pulse
//
// '#' starts a comment. Unknown keys are rejected with their line number.
// Parsing, canonical serialization, and the sweep-axis registry live here.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "meso/sim.hpp"

namespace meso {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

struct RawEntry {
    std::string value;
    int line = 0;
    mutable bool used = false;
};

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

}  // namespace detail

// Parsed key/value file with typed accessors and line diagnostics.
class FlatConfig {
  public:
    static FlatConfig parse(std::istream& is) {
        FlatConfig cfg;
        std::string line;
        int line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string t = detail::trim(line);
            if (t.empty()) continue;
            const std::size_t eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
            const std::string key = detail::trim(t.substr(0, eq));
            const std::string value = detail::trim(t.substr(eq + 1));
            if (key.empty())
                throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
            if (!cfg.entries_.emplace(key, detail::RawEntry{value, line_no, false}).second)
                throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" +
                                  key + "'");
        }
        return cfg;
    }

    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        it->second.used = true;
        return it->second.value;
    }

    double get_double(const std::string& key, double fallback) const {
        const auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        it->second.used = true;
        return parse_double(it->second);
    }

    long long get_int(const std::string& key, long long fallback) const {
        const auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        it->second.used = true;
        long long v = 0;
        const auto& raw = it->second.value;
        const auto res = std::from_chars(raw.data(), raw.data() + raw.size(), v);
        if (res.ec != std::errc{} || res.ptr != raw.data() + raw.size())
            throw ConfigError("config line " + std::to_string(it->second.line) + ": field '" +
                              key + "' is not an integer");
        return v;
    }

    bool get_bool(const std::string& key, bool fallback) const {
        const std::string v = get_string(key, fallback ? "true" : "false");
        if (v == "true") return true;
        if (v == "false") return false;
        throw ConfigError("config field '" + key + "' must be true or false");
    }

    // Indices k for which any "<prefix>.<k>.<...>" key exists.
    std::vector<int> group_indices(const std::string& prefix) const {
        std::vector<int> out;
        for (const auto& [key, entry] : entries_) {
            if (key.rfind(prefix + ".", 0) != 0) continue;
            const std::string rest = key.substr(prefix.size() + 1);
            const std::size_t dot = rest.find('.');
            const std::string idx = dot == std::string::npos ? rest : rest.substr(0, dot);
            int v = 0;
            const auto res = std::from_chars(idx.data(), idx.data() + idx.size(), v);
            if (res.ec != std::errc{} || res.ptr != idx.data() + idx.size())
                throw ConfigError("config line " + std::to_string(entry.line) +
                                  ": expected numeric index in '" + key + "'");
            if (out.empty() || out.back() != v) out.push_back(v);
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        for (std::size_t k = 0; k < out.size(); ++k)
            if (out[k] != static_cast<int>(k))
                throw ConfigError("config: indices under '" + prefix +
                                  "' must be contiguous from 0");
        return out;
    }

    void reject_unused() const {
        for (const auto& [key, entry] : entries_)
            if (!entry.used)
                throw ConfigError("config line " + std::to_string(entry.line) +
                                  ": unknown field '" + key + "'");
    }

  private:
    double parse_double(const detail::RawEntry& entry) const {
        double v = 0.0;
        const auto& raw = entry.value;
        const auto res = std::from_chars(raw.data(), raw.data() + raw.size(), v);
        if (res.ec != std::errc{} || res.ptr != raw.data() + raw.size())
            throw ConfigError("config line " + std::to_string(entry.line) +
                              ": not a number: '" + raw + "'");
        return v;
    }

    std::map<std::string, detail::RawEntry> entries_;
};

// One sweep axis: a parameter name from the registry plus its grid values.
struct SweepAxis {
    std::string param;
    std::vector<double> values;
};

struct SweepSpec {
    std::vector<SweepAxis> axes;
    std::size_t cap = 256;
    int workers = 4;
    bool simulate = false;
};

enum class LogVerbosity { Quiet, Info };

// Everything a run needs: the scenario plus output, analysis and sweep knobs.
struct RunConfig {
    Scenario scenario;
    std::string out_dir = "out";
    LogVerbosity verbosity = LogVerbosity::Info;
    bool analyze_after_simulate = false;
    double window_t0 = -1.0;  // < 0: full log range
    double window_t1 = -1.0;
    double iss_tol = 1e-6;
    SweepSpec sweep;
};

inline std::vector<double> parse_value_list(const std::string& raw) {
    std::vector<double> out;
    std::string cur;
    std::stringstream ss(raw);
    while (std::getline(ss, cur, ',')) {
        cur = detail::trim(cur);
        if (cur.empty()) continue;
        double v = 0.0;
        const auto res = std::from_chars(cur.data(), cur.data() + cur.size(), v);
        if (res.ec != std::errc{} || res.ptr != cur.data() + cur.size())
            throw ConfigError("sweep values: not a number: '" + cur + "'");
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError("sweep values: empty list");
    return out;
}

inline RunConfig load_run_config(std::istream& is) {
    const FlatConfig cfg = FlatConfig::parse(is);
    RunConfig rc;
    Scenario& sc = rc.scenario;

    sc.n_vehicles = static_cast<int>(cfg.get_int("scenario.n_vehicles", sc.n_vehicles));
    sc.dt = cfg.get_double("scenario.dt", sc.dt);
    sc.t_end = cfg.get_double("scenario.t_end", sc.t_end);
    sc.ic.seed = static_cast<std::uint64_t>(cfg.get_int("scenario.seed", 0));
    sc.ic.dp_halfwidth = cfg.get_double("scenario.ic.dp_halfwidth", 0.0);
    sc.ic.dv_halfwidth = cfg.get_double("scenario.ic.dv_halfwidth", 0.0);
    {
        const std::string refresh = cfg.get_string("scenario.psi_refresh", "per-stage");
        if (refresh == "per-stage") sc.psi_refresh = PsiRefresh::PerStage;
        else if (refresh == "per-step") sc.psi_refresh = PsiRefresh::PerStep;
        else throw ConfigError("scenario.psi_refresh must be per-stage or per-step");
    }

    sc.eq.dp_bar = cfg.get_double("eq.dp_bar", sc.eq.dp_bar);
    sc.eq.v_bar = cfg.get_double("eq.v_bar", sc.eq.v_bar);
    sc.limits.a_max = cfg.get_double("limits.a_max", sc.limits.a_max);
    sc.limits.v_max = cfg.get_double("limits.v_max", sc.limits.v_max);
    sc.limits.v_min = cfg.get_double("limits.v_min", sc.limits.v_min);

    {
        const std::string policy = cfg.get_string("controller.policy", "constant-spacing");
        if (policy == "constant-spacing") sc.controller.policy = SpacingPolicy::Constant;
        else if (policy == "variable-spacing") sc.controller.policy = SpacingPolicy::Variable;
        else throw ConfigError("controller.policy must be constant-spacing or variable-spacing");
    }
    sc.controller.k_dp = cfg.get_double("controller.k_dp", sc.controller.k_dp);
    sc.controller.k_dv = cfg.get_double("controller.k_dv", sc.controller.k_dv);
    sc.controller.upsilon = cfg.get_double("controller.upsilon", sc.controller.upsilon);
    sc.controller.rho.lambda[0] = cfg.get_double("rho.lambda.0", sc.controller.rho.lambda[0]);
    sc.controller.rho.lambda[1] = cfg.get_double("rho.lambda.1", sc.controller.rho.lambda[1]);
    sc.controller.rho.a = cfg.get_double("rho.a", sc.controller.rho.a);
    sc.controller.rho.b = cfg.get_double("rho.b", sc.controller.rho.b);
    sc.controller.rho.gamma_dp = cfg.get_double("rho.gamma_dp", sc.controller.rho.gamma_dp);
    sc.controller.rho.gamma_dv = cfg.get_double("rho.gamma_dv", sc.controller.rho.gamma_dv);

    const std::vector<int> sched = cfg.group_indices("schedule");
    if (!sched.empty()) {
        sc.speed_schedule.clear();
        for (int k : sched) {
            const std::string base = "schedule." + std::to_string(k);
            SpeedBreakpoint bp;
            bp.t = cfg.get_double(base + ".t", -1.0);
            bp.v = cfg.get_double(base + ".v", -1.0);
            if (bp.t < 0.0 || bp.v < 0.0)
                throw ConfigError("config: " + base + " needs non-negative .t and .v");
            sc.speed_schedule.push_back(bp);
        }
    }

    for (int k : cfg.group_indices("disturbance")) {
        const std::string base = "disturbance." + std::to_string(k);
        Disturbance d;
        d.target = static_cast<int>(cfg.get_int(base + ".target", 0));
        const std::string kind = cfg.get_string(base + ".kind", "pulse");
        if (kind == "pulse") d.kind = DisturbanceKind::Pulse;
        else if (kind == "sinusoid") d.kind = DisturbanceKind::Sinusoid;
        else throw ConfigError("config: " + base + ".kind must be pulse or sinusoid");
        d.amplitude = cfg.get_double(base + ".amplitude", 0.0);
        d.t_start = cfg.get_double(base + ".t_start", 0.0);
        d.t_end = cfg.get_double(base + ".t_end", 0.0);
        d.frequency = cfg.get_double(base + ".frequency", 0.0);
        if (d.kind == DisturbanceKind::Sinusoid && !(d.frequency > 0.0))
            throw ConfigError("config: " + base + ": sinusoid needs a positive .frequency");
        sc.disturbances.push_back(d);
    }

    rc.out_dir = cfg.get_string("run.out_dir", rc.out_dir);
    {
        const std::string v = cfg.get_string("run.log", "info");
        if (v == "info") rc.verbosity = LogVerbosity::Info;
        else if (v == "quiet") rc.verbosity = LogVerbosity::Quiet;
        else throw ConfigError("run.log must be info or quiet");
    }
    rc.analyze_after_simulate = cfg.get_bool("analysis.enabled", false);
    rc.window_t0 = cfg.get_double("analysis.window_t0", -1.0);
    rc.window_t1 = cfg.get_double("analysis.window_t1", -1.0);
    rc.iss_tol = cfg.get_double("analysis.iss_tol", 1e-6);

    rc.sweep.cap = static_cast<std::size_t>(cfg.get_int("sweep.cap", 256));
    rc.sweep.workers = static_cast<int>(cfg.get_int("sweep.workers", 4));
    rc.sweep.simulate = cfg.get_bool("sweep.simulate", false);
    for (int k : cfg.group_indices("sweep.axis")) {
        const std::string base = "sweep.axis." + std::to_string(k);
        SweepAxis axis;
        axis.param = cfg.get_string(base + ".param", "");
        if (axis.param.empty()) throw ConfigError("config: " + base + ".param is required");
        axis.values = parse_value_list(cfg.get_string(base + ".values", ""));
        rc.sweep.axes.push_back(axis);
    }

    cfg.reject_unused();
    rc.scenario.validate();
    return rc;
}

inline void serialize(const RunConfig& rc, std::ostream& os) {
    char buf[40];
    const auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    const Scenario& sc = rc.scenario;
    os << "scenario.n_vehicles = " << sc.n_vehicles << "\n";
    os << "scenario.dt = " << num(sc.dt) << "\n";
    os << "scenario.t_end = " << num(sc.t_end) << "\n";
    os << "scenario.seed = " << sc.ic.seed << "\n";
    os << "scenario.ic.dp_halfwidth = " << num(sc.ic.dp_halfwidth) << "\n";
    os << "scenario.ic.dv_halfwidth = " << num(sc.ic.dv_halfwidth) << "\n";
    os << "scenario.psi_refresh = "
       << (sc.psi_refresh == PsiRefresh::PerStage ? "per-stage" : "per-step") << "\n";
    os << "eq.dp_bar = " << num(sc.eq.dp_bar) << "\n";
    os << "eq.v_bar = " << num(sc.eq.v_bar) << "\n";
    os << "limits.a_max = " << num(sc.limits.a_max) << "\n";
    os << "limits.v_max = " << num(sc.limits.v_max) << "\n";
    os << "limits.v_min = " << num(sc.limits.v_min) << "\n";
    os << "controller.policy = " << to_string(sc.controller.policy) << "\n";
    os << "controller.k_dp = " << num(sc.controller.k_dp) << "\n";
    os << "controller.k_dv = " << num(sc.controller.k_dv) << "\n";
    os << "controller.upsilon = " << num(sc.controller.upsilon) << "\n";
    os << "rho.lambda.0 = " << num(sc.controller.rho.lambda[0]) << "\n";
    os << "rho.lambda.1 = " << num(sc.controller.rho.lambda[1]) << "\n";
    os << "rho.a = " << num(sc.controller.rho.a) << "\n";
    os << "rho.b = " << num(sc.controller.rho.b) << "\n";
    os << "rho.gamma_dp = " << num(sc.controller.rho.gamma_dp) << "\n";
    os << "rho.gamma_dv = " << num(sc.controller.rho.gamma_dv) << "\n";
    for (std::size_t k = 0; k < sc.speed_schedule.size(); ++k) {
        os << "schedule." << k << ".t = " << num(sc.speed_schedule[k].t) << "\n";
        os << "schedule." << k << ".v = " << num(sc.speed_schedule[k].v) << "\n";
    }
    for (std::size_t k = 0; k < sc.disturbances.size(); ++k) {
        const Disturbance& d = sc.disturbances[k];
        os << "disturbance." << k << ".target = " << d.target << "\n";
        os << "disturbance." << k
           << ".kind = " << (d.kind == DisturbanceKind::Pulse ? "pulse" : "sinusoid") << "\n";
        os << "disturbance." << k << ".amplitude = " << num(d.amplitude) << "\n";
        os << "disturbance." << k << ".t_start = " << num(d.t_start) << "\n";
        os << "disturbance." << k << ".t_end = " << num(d.t_end) << "\n";
        if (d.kind == DisturbanceKind::Sinusoid)
            os << "disturbance." << k << ".frequency = " << num(d.frequency) << "\n";
    }
    os << "run.out_dir = " << rc.out_dir << "\n";
    os << "run.log = " << (rc.verbosity == LogVerbosity::Info ? "info" : "quiet") << "\n";
    os << "analysis.enabled = " << (rc.analyze_after_simulate ? "true" : "false") << "\n";
    os << "analysis.window_t0 = " << num(rc.window_t0) << "\n";
    os << "analysis.window_t1 = " << num(rc.window_t1) << "\n";
    os << "analysis.iss_tol = " << num(rc.iss_tol) << "\n";
    os << "sweep.cap = " << rc.sweep.cap << "\n";
    os << "sweep.workers = " << rc.sweep.workers << "\n";
    os << "sweep.simulate = " << (rc.sweep.simulate ? "true" : "false") << "\n";
    for (std::size_t k = 0; k < rc.sweep.axes.size(); ++k) {
        os << "sweep.axis." << k << ".param = " << rc.sweep.axes[k].param << "\n";
        os << "sweep.axis." << k << ".values = ";
        for (std::size_t j = 0; j < rc.sweep.axes[k].values.size(); ++j)
            os << (j ? "," : "") << num(rc.sweep.axes[k].values[j]);
        os << "\n";
    }
}

// Parameters a sweep may vary. Integer-valued targets insist on whole values.
inline void apply_sweep_value(RunConfig& rc, const std::string& param, double v) {
    Scenario& sc = rc.scenario;
    const auto as_int = [&](const char* what) {
        if (std::abs(v - std::round(v)) > 1e-9)
            throw ConfigError(std::string("sweep: ") + what + " requires integer values");
        return static_cast<long long>(std::llround(v));
    };
    if (param == "controller.k_dp") sc.controller.k_dp = v;
    else if (param == "controller.k_dv") sc.controller.k_dv = v;
    else if (param == "controller.upsilon") sc.controller.upsilon = v;
    else if (param == "rho.a") sc.controller.rho.a = v;
    else if (param == "rho.b") sc.controller.rho.b = v;
    else if (param == "rho.gamma_dp") sc.controller.rho.gamma_dp = v;
    else if (param == "rho.gamma_dv") sc.controller.rho.gamma_dv = v;
    else if (param == "rho.lambda.0") sc.controller.rho.lambda[0] = v;
    else if (param == "rho.lambda.1") sc.controller.rho.lambda[1] = v;
    else if (param == "scenario.n_vehicles") sc.n_vehicles = static_cast<int>(as_int(param.c_str()));
    else if (param == "scenario.seed") sc.ic.seed = static_cast<std::uint64_t>(as_int(param.c_str()));
    else if (param == "scenario.dt") sc.dt = v;
    else throw ConfigError("sweep: unknown parameter '" + param + "'");
}

}  // namespace meso
