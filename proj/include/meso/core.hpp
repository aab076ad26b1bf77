#pragma once

// Domain types and open-loop dynamics for a leader-follower vehicle chain.
// The pair (relative) state is the state of record throughout the library;
// absolute vehicle states are derived views.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace meso {

inline constexpr const char* kVersion = "0.1.0";

// Absolute longitudinal state of one vehicle.
struct VehicleState {
    double p = 0.0;  // position [m]
    double v = 0.0;  // speed [m/s]
};

// Relative state of one car-following pair:
//   dp = p_i - p_{i-1}  (negative while the follower is behind its leader)
//   dv = v_i - v_{i-1}
struct CarFollowingState {
    double dp = 0.0;  // [m]
    double dv = 0.0;  // [m/s]
};

// Spacing policy selector. The constant policy tracks a fixed gap; the
// variable policy shifts the gap reference by the controller filter state.
enum class SpacingPolicy {
    Constant,
    Variable,
};

// Dimension of the controller filter state for a policy.
constexpr int rho_dim(SpacingPolicy policy) {
    return policy == SpacingPolicy::Variable ? 2 : 1;
}

inline const char* to_string(SpacingPolicy policy) {
    return policy == SpacingPolicy::Variable ? "variable-spacing" : "constant-spacing";
}

// Pair state extended with the controller filter state rho. rho[1] is only
// meaningful for the variable policy and is kept at exactly 0 otherwise.
struct ExtendedPairState {
    CarFollowingState chi;
    std::array<double, 2> rho{0.0, 0.0};
};

// Desired constant gap and cruise speed defining the platoon equilibrium
// (dp = -dp_bar, dv = 0, rho = 0).
struct EquilibriumSpec {
    double dp_bar = 20.0;  // desired gap [m], > 0
    double v_bar = 14.0;   // cruise speed [m/s], > 0

    void validate() const {
        if (!(dp_bar > 0.0) || !std::isfinite(dp_bar))
            throw std::invalid_argument("EquilibriumSpec: dp_bar must be positive");
        if (!(v_bar > 0.0) || !std::isfinite(v_bar))
            throw std::invalid_argument("EquilibriumSpec: v_bar must be positive");
    }
};

// Actuation and speed envelope.
struct Limits {
    double a_max = 4.0;   // |u| bound [m/s^2]
    double v_max = 36.0;  // speed ceiling [m/s]
    double v_min = 0.0;   // speed floor [m/s]

    void validate() const {
        if (!(a_max > 0.0)) throw std::invalid_argument("Limits: a_max must be positive");
        if (!(v_min >= 0.0) || !(v_min < v_max))
            throw std::invalid_argument("Limits: need 0 <= v_min < v_max");
    }
};

// Full platoon snapshot: N+1 extended pair states plus the virtual leader.
// `absolute`, when present, is a reconstructed view of vehicle states.
struct PlatoonState {
    std::vector<ExtendedPairState> pairs;
    VehicleState leader;
    std::optional<std::vector<VehicleState>> absolute;
};

namespace detail {

inline void require_finite(double x, const char* what) {
    if (!std::isfinite(x)) throw std::domain_error(std::string("non-finite ") + what);
}

}  // namespace detail

// Open-loop pair dynamics: d(dp)/dt = dv, d(dv)/dt = u_follower - u_leader.
inline CarFollowingState pair_derivative(const CarFollowingState& chi, double u_follower,
                                         double u_leader) {
    detail::require_finite(chi.dp, "dp");
    detail::require_finite(chi.dv, "dv");
    detail::require_finite(u_follower, "u_follower");
    detail::require_finite(u_leader, "u_leader");
    return {chi.dv, u_follower - u_leader};
}

// Advance the virtual leader over one interval at the scheduled speed v_bar.
// The virtual leader never accelerates; speed changes arrive as schedule steps.
inline VehicleState virtual_leader_advance(const VehicleState& leader, double v_bar, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("virtual_leader_advance: dt must be positive");
    detail::require_finite(leader.p, "leader.p");
    detail::require_finite(v_bar, "v_bar");
    return {leader.p + v_bar * dt, v_bar};
}

// Rebuild absolute vehicle states from the leader state and the pair chain:
// x_i = x_{i-1} + chi_i, applied from i = 0 upward.
inline std::vector<VehicleState> reconstruct_absolute(const PlatoonState& platoon) {
    std::vector<VehicleState> out;
    out.reserve(platoon.pairs.size());
    VehicleState prev = platoon.leader;
    for (const auto& pair : platoon.pairs) {
        VehicleState cur{prev.p + pair.chi.dp, prev.v + pair.chi.dv};
        out.push_back(cur);
        prev = cur;
    }
    return out;
}

// Inverse view: pair states from the leader and an ordered list of absolute states.
inline std::vector<CarFollowingState> make_pairs(const VehicleState& leader,
                                                 std::span<const VehicleState> absolute) {
    std::vector<CarFollowingState> out;
    out.reserve(absolute.size());
    VehicleState prev = leader;
    for (const auto& x : absolute) {
        out.push_back({x.p - prev.p, x.v - prev.v});
        prev = x;
    }
    return out;
}

}  // namespace meso
