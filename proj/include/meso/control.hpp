#pragma once

// The two mesoscopic control laws. Both are stateless maps from the local
// pair state, the filter state rho, the predecessor aggregate psi and the
// communicated predecessor command to an acceleration command; integration
// of rho lives with the simulation engine.

#include <array>
#include <cmath>
#include <stdexcept>

#include "meso/aggregates.hpp"
#include "meso/core.hpp"

namespace meso {

// Gains and filter parameters shared by every vehicle in the platoon.
struct ControllerParams {
    SpacingPolicy policy = SpacingPolicy::Constant;
    double k_dp = 1.0;    // gap-error gain, > 0
    double k_dv = 2.0;    // speed-error gain, > 0
    RhoParams rho;
    double upsilon = 0.9;  // ISS margin split, certificate valid only in (0,1)

    void validate() const {
        if (!(k_dp > 0.0) || !(k_dv > 0.0))
            throw std::invalid_argument("ControllerParams: gains must be positive");
        if (!(upsilon > 0.0) || !std::isfinite(upsilon))
            throw std::invalid_argument("ControllerParams: upsilon must be positive");
        rho.validate(policy);
    }
};

// Output of one control evaluation: the unsaturated command plus the
// references it tracked, kept for logging and analysis.
struct ControlDecision {
    double u_cmd = 0.0;   // [m/s^2], unsaturated
    double dp_ref = 0.0;  // [m]
    double dv_ref = 0.0;  // [m/s]
};

// Gap reference: -dp_bar under the constant policy, -dp_bar - rho[0] under
// the variable one (rho[0] is the component feeding the spacing trajectory).
inline double spacing_reference(SpacingPolicy policy, const EquilibriumSpec& eq,
                                const std::array<double, 2>& rho) {
    if (policy == SpacingPolicy::Constant) return -eq.dp_bar;
    return -eq.dp_bar - rho[0];
}

// Constant-spacing law:
//   u = u_prev + dv_ref_dot - k_dv (dv - dv_ref) - (dp - dp_ref) - rho
// with dv_ref = -k_dp (dp - dp_ref) and dv_ref_dot = -k_dp dv.
inline ControlDecision control_cp(const CarFollowingState& chi, double rho, double u_leader,
                                  const ControllerParams& params, const EquilibriumSpec& eq) {
    const double dp_ref = -eq.dp_bar;
    const double e_p = chi.dp - dp_ref;
    const double dv_ref = -params.k_dp * e_p;
    const double dv_ref_dot = -params.k_dp * chi.dv;
    const double u =
        u_leader + dv_ref_dot - params.k_dv * (chi.dv - dv_ref) - e_p - rho;
    return {u, dp_ref, dv_ref};
}

// Variable-spacing law: the gap reference moves with rho[0], and the psi
// aggregate enters the command directly with weights a, b.
inline ControlDecision control_vp(const CarFollowingState& chi, const std::array<double, 2>& rho,
                                  const PsiPair& psi_prev, double u_leader,
                                  const ControllerParams& params, const EquilibriumSpec& eq) {
    const double l1 = params.rho.lambda[0];
    const double l2 = params.rho.lambda[1];
    const double dp_ref = -eq.dp_bar - rho[0];
    const double e_p = chi.dp - dp_ref;
    const double rho_drive = l1 * rho[0] - rho[1];  // = -d(rho[0])/dt
    const double dv_ref = rho_drive - params.k_dp * e_p;
    const double u = u_leader - e_p - params.k_dv * (chi.dv - dv_ref) +
                     (params.k_dp - l1) * rho_drive + l2 * rho[1] - params.k_dp * chi.dv -
                     params.rho.a * psi_prev.psi_dp - params.rho.b * psi_prev.psi_dv;
    return {u, dp_ref, dv_ref};
}

inline ControlDecision evaluate_control(const CarFollowingState& chi,
                                        const std::array<double, 2>& rho, const PsiPair& psi_prev,
                                        double u_leader, const ControllerParams& params,
                                        const EquilibriumSpec& eq) {
    return params.policy == SpacingPolicy::Constant
               ? control_cp(chi, rho[0], u_leader, params, eq)
               : control_vp(chi, rho, psi_prev, u_leader, params, eq);
}

// Error coordinates of one extended pair relative to the equilibrium:
// e_dp = dp + dp_bar, e_dv = dv, plus the filter state (zero at equilibrium).
// rho2 stays exactly 0 under the constant policy, so the Euclidean norm can
// always run over all four slots.
struct PairError {
    double e_dp = 0.0;
    double e_dv = 0.0;
    double rho1 = 0.0;
    double rho2 = 0.0;

    double norm() const {
        return std::sqrt(e_dp * e_dp + e_dv * e_dv + rho1 * rho1 + rho2 * rho2);
    }
};

inline PairError make_error(const ExtendedPairState& x, const EquilibriumSpec& eq) {
    return {x.chi.dp + eq.dp_bar, x.chi.dv, x.rho[0], x.rho[1]};
}

// Closed-loop vector field in error coordinates, interconnection included.
// The psi aggregate of the predecessors is the only coupling; it enters the
// rho row under the constant policy, and the e_dv / rho2 rows (with opposite
// signs, weighted by a and b) under the variable one.
inline PairError closed_loop_error_derivative(SpacingPolicy policy, const PairError& x,
                                              const PsiPair& psi_prev,
                                              const ControllerParams& params) {
    const double psi_in = params.rho.a * psi_prev.psi_dp + params.rho.b * psi_prev.psi_dv;
    if (policy == SpacingPolicy::Constant) {
        const double s = x.e_dv + params.k_dp * x.e_dp;
        PairError d;
        d.e_dp = x.e_dv;
        d.e_dv = -params.k_dp * x.e_dv - params.k_dv * s - x.e_dp - x.rho1;
        d.rho1 = -params.rho.lambda[0] * x.rho1 + psi_in;
        d.rho2 = 0.0;
        return d;
    }
    const double l1 = params.rho.lambda[0];
    const double l2 = params.rho.lambda[1];
    const double e_p = x.e_dp + x.rho1;
    const double rho_drive = l1 * x.rho1 - x.rho2;
    const double s = x.e_dv - (rho_drive - params.k_dp * e_p);
    PairError d;
    d.e_dp = x.e_dv;
    d.e_dv = -e_p - params.k_dv * s + (params.k_dp - l1) * rho_drive + l2 * x.rho2 -
             params.k_dp * x.e_dv - psi_in;
    d.rho1 = -l1 * x.rho1 + x.rho2;
    d.rho2 = -l2 * x.rho2 + psi_in;
    return d;
}

}  // namespace meso
