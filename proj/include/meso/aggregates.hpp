#pragma once

// Macroscopic aggregates over the upstream platoon: prefix means/variances of
// the pair states, the signed-dispersion psi functions built from them, and
// the stable filter that carries the aggregate signal into each controller.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "meso/core.hpp"

namespace meso {

// Population statistics of dp and dv over pairs 0..i (divisor i+1).
struct AggregateStats {
    double mu_dp = 0.0;   // [m]
    double var_dp = 0.0;  // [m^2]
    double mu_dv = 0.0;   // [m/s]
    double var_dv = 0.0;  // [m^2/s^2]
    std::size_t count = 0;
};

// Values of the distance / speed-error macroscopic functions.
struct PsiPair {
    double psi_dp = 0.0;
    double psi_dv = 0.0;
};

// Parameters of the aggregate filter rho and of the psi functions.
// lambda entries must be positive so the filter is asymptotically stable;
// only lambda[0] is used by the constant-spacing policy.
struct RhoParams {
    std::array<double, 2> lambda{1.5, 1.5};
    double a = 0.0;  // weight on psi_dp, >= 0
    double b = 0.0;  // weight on psi_dv, >= 0
    double gamma_dp = 0.5;
    double gamma_dv = 0.5;

    void validate(SpacingPolicy policy) const {
        for (int k = 0; k < rho_dim(policy); ++k)
            if (!(lambda[static_cast<std::size_t>(k)] > 0.0))
                throw std::invalid_argument("RhoParams: lambda entries must be positive");
        if (!(a >= 0.0) || !(b >= 0.0))
            throw std::invalid_argument("RhoParams: a and b must be non-negative");
        if (!(gamma_dp > 0.0) || !(gamma_dv > 0.0))
            throw std::invalid_argument("RhoParams: gamma weights must be positive");
    }
};

// sign with sign(0) = 0, so psi vanishes exactly at the symmetric point.
inline double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Population mean/variance of the pair states, two-pass (mean first, then
// squared deviations; the one-pass form cancels badly near equilibrium).
inline AggregateStats aggregate_stats(std::span<const CarFollowingState> pairs) {
    if (pairs.empty()) throw std::domain_error("aggregate_stats: empty pair list");
    const double n = static_cast<double>(pairs.size());
    AggregateStats s;
    s.count = pairs.size();
    for (const auto& c : pairs) {
        s.mu_dp += c.dp;
        s.mu_dv += c.dv;
    }
    s.mu_dp /= n;
    s.mu_dv /= n;
    for (const auto& c : pairs) {
        const double ep = c.dp - s.mu_dp;
        const double ev = c.dv - s.mu_dv;
        s.var_dp += ep * ep;
        s.var_dv += ev * ev;
    }
    s.var_dp /= n;
    s.var_dv /= n;
    return s;
}

// psi_dp = gamma_dp * sign(dp_bar + mu_dp) * sqrt(var_dp)
// psi_dv = gamma_dv * sign(mu_dv) * sqrt(var_dv)
// dp_bar + mu_dp is the mean gap error, so both channels vanish at equilibrium.
inline PsiPair psi(const AggregateStats& stats, const EquilibriumSpec& eq,
                   const RhoParams& params) {
    PsiPair out;
    out.psi_dp = params.gamma_dp * sign0(eq.dp_bar + stats.mu_dp) * std::sqrt(stats.var_dp);
    out.psi_dv = params.gamma_dv * sign0(stats.mu_dv) * std::sqrt(stats.var_dv);
    return out;
}

// Filter dynamics, r = 1: d(rho)/dt = -lambda*rho + a*psi_dp + b*psi_dv.
// psi_prev is the aggregate over the predecessors (identically 0 for vehicle 0).
inline double rho_derivative_cp(double rho, const PsiPair& psi_prev, const RhoParams& params) {
    return -params.lambda[0] * rho + params.a * psi_prev.psi_dp + params.b * psi_prev.psi_dv;
}

// Filter dynamics, r = 2: upper-triangular stable chain driven on the second row.
inline std::array<double, 2> rho_derivative_vp(const std::array<double, 2>& rho,
                                               const PsiPair& psi_prev,
                                               const RhoParams& params) {
    return {-params.lambda[0] * rho[0] + rho[1],
            -params.lambda[1] * rho[1] + params.a * psi_prev.psi_dp + params.b * psi_prev.psi_dv};
}

// One bound violation found while auditing psi against its analytic envelopes.
struct PsiBoundViolation {
    std::size_t sample = 0;  // snapshot index
    std::size_t prefix = 0;  // aggregate computed over pairs 0..prefix
    char channel = 'p';      // 'p' or 'v'
    bool sum_bound = false;  // false: max bound, true: scaled sum bound
    double lhs = 0.0;
    double rhs = 0.0;
};

// Audits |psi_l| <= gamma_l * max_j |l_j + e_l| and
//        |psi_l| <= gamma_l / sqrt(i+1) * sum_j |l_j + e_l|
// over every prefix of every snapshot. Expected to return no violations.
inline std::vector<PsiBoundViolation> check_lemma2_bounds(
    std::span<const std::vector<CarFollowingState>> history, const RhoParams& params,
    const EquilibriumSpec& eq, double tol = 1e-12) {
    std::vector<PsiBoundViolation> out;
    for (std::size_t s = 0; s < history.size(); ++s) {
        const auto& pairs = history[s];
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const std::span<const CarFollowingState> prefix(pairs.data(), i + 1);
            const PsiPair ps = psi(aggregate_stats(prefix), eq, params);
            double max_p = 0.0, max_v = 0.0, sum_p = 0.0, sum_v = 0.0;
            for (const auto& c : prefix) {
                const double ep = std::abs(c.dp + eq.dp_bar);
                const double ev = std::abs(c.dv);
                max_p = std::max(max_p, ep);
                max_v = std::max(max_v, ev);
                sum_p += ep;
                sum_v += ev;
            }
            const double root_n = std::sqrt(static_cast<double>(i + 1));
            const auto audit = [&](char ch, double lhs, double max_l, double sum_l, double gamma) {
                if (std::abs(lhs) > gamma * max_l + tol)
                    out.push_back({s, i, ch, false, std::abs(lhs), gamma * max_l});
                if (std::abs(lhs) > gamma / root_n * sum_l + tol)
                    out.push_back({s, i, ch, true, std::abs(lhs), gamma / root_n * sum_l});
            };
            audit('p', ps.psi_dp, max_p, sum_p, params.gamma_dp);
            audit('v', ps.psi_dv, max_v, sum_v, params.gamma_dv);
        }
    }
    return out;
}

// Variance never exceeds a quarter of the squared range.
inline bool check_variance_property(std::span<const double> values, double tol = 1e-12) {
    if (values.empty()) throw std::domain_error("check_variance_property: empty list");
    double mu = 0.0, lo = values.front(), hi = values.front();
    for (double v : values) {
        detail::require_finite(v, "value");
        mu += v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    mu /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mu) * (v - mu);
    var /= static_cast<double>(values.size());
    return var <= 0.25 * (hi - lo) * (hi - lo) + tol;
}

}  // namespace meso
