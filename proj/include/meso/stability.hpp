#pragma once

// ISS/Lyapunov constants for both control laws, the certificate matrices,
// and empirical string-stability checks over trajectory logs.
//
// The sum-of-squares Lyapunov expressions are the ground truth here. The
// printed certificate matrices are assembled verbatim for reference and are
// cross-checked against the Hessians of those expressions; any disagreement
// is reported rather than silently patched. Likewise, the decrease constant
// alpha is the minimum diagonal of the (upper-triangular, non-symmetric)
// printed Q, which does not by itself imply the quadratic decrease bound, so
// the conditional ISS inequality is verified empirically along logged runs.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "meso/control.hpp"
#include "meso/sim.hpp"

namespace meso {

// The constants of one policy's ISS certificate.
struct LyapunovConstants {
    SpacingPolicy policy = SpacingPolicy::Constant;
    double alpha_lower = 0.0;  // quadratic sandwich, lower
    double alpha_upper = 0.0;  // quadratic sandwich, upper
    double alpha = 0.0;        // decrease constant (min diagonal of Q)
    double d = 0.0;            // interconnection gain a*gamma_dp + b*gamma_dv
    double upsilon = 0.0;      // margin split
    double gamma_tilde = 0.0;  // ISS gain

    // Overshoot of the quadratic sandwich; instantiates beta(s, 0) = overshoot * s.
    double overshoot() const { return std::sqrt(alpha_upper / alpha_lower); }

    bool certificate_valid() const {
        return alpha > 0.0 && upsilon > 0.0 && upsilon < 1.0 && gamma_tilde > 0.0 &&
               gamma_tilde < 1.0;
    }
};

inline LyapunovConstants constants_cp(const ControllerParams& params) {
    if (params.policy != SpacingPolicy::Constant)
        throw std::invalid_argument("constants_cp: params are not constant-spacing");
    params.validate();
    const double k_dp = params.k_dp, k_dv = params.k_dv, lambda = params.rho.lambda[0];
    LyapunovConstants c;
    c.policy = SpacingPolicy::Constant;
    c.alpha_lower = 0.5;
    c.alpha_upper = 0.5 * (1.0 + k_dp * k_dp);
    c.alpha = std::min({k_dv, k_dp * (1.0 + k_dv * k_dp), lambda});
    c.d = params.rho.a * params.rho.gamma_dp + params.rho.b * params.rho.gamma_dv;
    c.upsilon = params.upsilon;
    c.gamma_tilde = c.overshoot() * c.d / (c.alpha * c.upsilon);
    return c;
}

inline LyapunovConstants constants_vp(const ControllerParams& params) {
    if (params.policy != SpacingPolicy::Variable)
        throw std::invalid_argument("constants_vp: params are not variable-spacing");
    params.validate();
    const double k_dp = params.k_dp, k_dv = params.k_dv;
    const double l1 = params.rho.lambda[0], l2 = params.rho.lambda[1];
    LyapunovConstants c;
    c.policy = SpacingPolicy::Variable;
    c.alpha_lower = 0.5;
    c.alpha_upper = 0.5 * std::max(1.0 + k_dp * k_dp, 2.0 + (l1 - k_dp) * (l1 - k_dp));
    c.alpha = std::min({k_dp * (1.0 + k_dp * k_dv), k_dv,
                        k_dp + l1 + k_dv * (l1 - k_dp) * (l1 - k_dp), l2 + k_dv});
    c.d = params.rho.a * params.rho.gamma_dp + params.rho.b * params.rho.gamma_dv;
    c.upsilon = params.upsilon;
    c.gamma_tilde = c.overshoot() * c.d / (c.alpha * c.upsilon);
    return c;
}

inline LyapunovConstants lyapunov_constants(const ControllerParams& params) {
    return params.policy == SpacingPolicy::Constant ? constants_cp(params) : constants_vp(params);
}

// ---------------------------------------------------------------------------
// Lyapunov function of one isolated pair, as an explicit sum of squares, with
// its gradient. Coordinates are PairError = (e_dp, e_dv, rho1, rho2).

inline double lyapunov_w(SpacingPolicy policy, const PairError& x,
                         const ControllerParams& params) {
    if (policy == SpacingPolicy::Constant) {
        const double s = x.e_dv + params.k_dp * x.e_dp;
        return 0.5 * (x.e_dp * x.e_dp + s * s + x.rho1 * x.rho1);
    }
    const double e_p = x.e_dp + x.rho1;
    const double s = x.e_dv + params.k_dp * e_p - params.rho.lambda[0] * x.rho1 + x.rho2;
    return 0.5 * (e_p * e_p + s * s + x.rho1 * x.rho1 + x.rho2 * x.rho2);
}

inline PairError lyapunov_w_gradient(SpacingPolicy policy, const PairError& x,
                                     const ControllerParams& params) {
    if (policy == SpacingPolicy::Constant) {
        const double s = x.e_dv + params.k_dp * x.e_dp;
        return {x.e_dp + params.k_dp * s, s, x.rho1, 0.0};
    }
    const double l1 = params.rho.lambda[0];
    const double e_p = x.e_dp + x.rho1;
    const double s = x.e_dv + params.k_dp * e_p - l1 * x.rho1 + x.rho2;
    return {e_p + params.k_dp * s, s, e_p + (params.k_dp - l1) * s + x.rho1, s + x.rho2};
}

// ---------------------------------------------------------------------------
// Certificate matrices: the upper-triangular quadratic forms as printed, and
// the symmetric forms derived from the sum-of-squares expressions.
// Conventions: W = 1/2 x' P x and -dW/dt = x' Q x (isolated subsystem).

struct CertificateMatrices {
    Eigen::MatrixXd p_printed;  // upper-triangular
    Eigen::MatrixXd q_printed;  // upper-triangular
    Eigen::MatrixXd w_hessian;  // ground truth: W = 1/2 x' w_hessian x
    Eigen::MatrixXd wdot_form;  // ground truth: -dW/dt = x' wdot_form x (symmetric)
    std::vector<std::string> discrepancies;
    double q_diag_min = 0.0;
    bool diagonals_positive = false;
    bool alpha_matches_diag_min = false;

    // Exact quadratic-sandwich and decrease constants of the sum-of-squares
    // forms. The certificate's alpha_lower/alpha_upper/alpha read the
    // triangular renderings' diagonals instead, so these can differ; both
    // sets are reported.
    double sandwich_lower_exact = 0.0;  // min of W/|x|^2
    double sandwich_upper_exact = 0.0;  // max of W/|x|^2
    double decay_rate_exact = 0.0;      // min of (-dW/dt)/W, isolated system
};

namespace detail {

inline void add_outer(Eigen::MatrixXd& m, const Eigen::VectorXd& c, double w) {
    m += w * c * c.transpose();
}

}  // namespace detail

inline CertificateMatrices certificate_matrices(const ControllerParams& params) {
    params.validate();
    const double k = params.k_dp, kv = params.k_dv;
    CertificateMatrices out;
    if (params.policy == SpacingPolicy::Constant) {
        const double lambda = params.rho.lambda[0];
        out.p_printed = Eigen::MatrixXd{{1.0 + k * k, 2.0 * k, 0.0},  //
                                        {0.0, 1.0, 0.0},
                                        {0.0, 0.0, 1.0}};
        out.q_printed = Eigen::MatrixXd{{k * (1.0 + kv * k), 2.0 * kv * k, k},
                                        {0.0, kv, 1.0},
                                        {0.0, 0.0, lambda}};
        Eigen::VectorXd c0{{1.0, 0.0, 0.0}};
        Eigen::VectorXd c1{{k, 1.0, 0.0}};  // s = e_dv + k e_dp
        Eigen::VectorXd c2{{0.0, 0.0, 1.0}};
        out.w_hessian = Eigen::MatrixXd::Zero(3, 3);
        detail::add_outer(out.w_hessian, c0, 1.0);
        detail::add_outer(out.w_hessian, c1, 1.0);
        detail::add_outer(out.w_hessian, c2, 1.0);
        // -dW/dt = k e_dp^2 + kv s^2 + lambda rho^2 + s rho
        out.wdot_form = Eigen::MatrixXd::Zero(3, 3);
        detail::add_outer(out.wdot_form, c0, k);
        detail::add_outer(out.wdot_form, c1, kv);
        detail::add_outer(out.wdot_form, c2, lambda);
        out.wdot_form += 0.5 * (c1 * c2.transpose() + c2 * c1.transpose());
    } else {
        const double l1 = params.rho.lambda[0], l2 = params.rho.lambda[1];
        const double p1 = 2.0 * k;
        const double p2 = 2.0 * (1.0 + k * k - l1 * k);
        const double p3 = 2.0 * (k - l1);
        out.p_printed = Eigen::MatrixXd{{1.0 + k * k, p1, p2, p1},
                                        {0.0, 1.0, p3, 2.0},
                                        {0.0, 0.0, 2.0 + (l1 - k) * (l1 - k), p3},
                                        {0.0, 0.0, 0.0, 2.0}};
        const double q1 = k * (1.0 + k * kv);
        const double q2 = 2.0 * k * (1.0 + kv * (k - l1));
        const double q3 = 2.0 * kv * (k - l1);
        const double q4 = k + l1 + kv * (l1 - k) * (l1 - k);
        const double q5 = 1.0 - 2.0 * kv * (k - l1);
        out.q_printed = Eigen::MatrixXd{{q1, 2.0 * k * kv, q2, 2.0 * k * kv},
                                        {0.0, kv, q3, 2.0 * kv},
                                        {0.0, 0.0, q4, q5},
                                        {0.0, 0.0, 0.0, l2 + kv}};
        Eigen::VectorXd c0{{1.0, 0.0, 1.0, 0.0}};           // e_p = e_dp + rho1
        Eigen::VectorXd c1{{k, 1.0, k - l1, 1.0}};          // s
        Eigen::VectorXd c2{{0.0, 0.0, 1.0, 0.0}};
        Eigen::VectorXd c3{{0.0, 0.0, 0.0, 1.0}};
        out.w_hessian = Eigen::MatrixXd::Zero(4, 4);
        detail::add_outer(out.w_hessian, c0, 1.0);
        detail::add_outer(out.w_hessian, c1, 1.0);
        detail::add_outer(out.w_hessian, c2, 1.0);
        detail::add_outer(out.w_hessian, c3, 1.0);
        // -dW/dt = k e_p^2 + kv s^2 + l1 rho1^2 + l2 rho2^2 - rho1 rho2
        out.wdot_form = Eigen::MatrixXd::Zero(4, 4);
        detail::add_outer(out.wdot_form, c0, k);
        detail::add_outer(out.wdot_form, c1, kv);
        detail::add_outer(out.wdot_form, c2, l1);
        detail::add_outer(out.wdot_form, c3, l2);
        out.wdot_form -= 0.5 * (c2 * c3.transpose() + c3 * c2.transpose());
    }

    out.q_diag_min = out.q_printed.diagonal().minCoeff();
    out.diagonals_positive =
        out.p_printed.diagonal().minCoeff() > 0.0 && out.q_diag_min > 0.0;
    out.alpha_matches_diag_min =
        std::abs(out.q_diag_min - lyapunov_constants(params).alpha) <= 1e-12;

    {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.w_hessian);
        out.sandwich_lower_exact = 0.5 * es.eigenvalues().minCoeff();
        out.sandwich_upper_exact = 0.5 * es.eigenvalues().maxCoeff();
        Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(
            out.wdot_form, Eigen::MatrixXd(0.5 * out.w_hessian));
        out.decay_rate_exact = ges.eigenvalues().minCoeff();
    }

    const auto compare = [&](const char* name, const Eigen::MatrixXd& printed,
                             const Eigen::MatrixXd& truth) {
        const Eigen::MatrixXd sym = 0.5 * (printed + printed.transpose());
        for (Eigen::Index r = 0; r < sym.rows(); ++r)
            for (Eigen::Index col = r; col < sym.cols(); ++col)
                if (std::abs(sym(r, col) - truth(r, col)) > 1e-9) {
                    std::ostringstream oss;
                    oss << name << "(" << r << "," << col << "): printed form gives "
                        << sym(r, col) << ", sum-of-squares form gives " << truth(r, col);
                    out.discrepancies.push_back(oss.str());
                }
    };
    compare("P", out.p_printed, out.w_hessian);
    compare("Q", out.q_printed, out.wdot_form);
    return out;
}

// Isolated closed-loop system matrix in error coordinates (psi = 0); the
// field is linear there, so columns are field evaluations on basis vectors.
inline Eigen::MatrixXd closed_loop_matrix(const ControllerParams& params) {
    const int dim = 2 + rho_dim(params.policy);
    Eigen::MatrixXd a(dim, dim);
    for (int j = 0; j < dim; ++j) {
        PairError e;
        e.e_dp = j == 0 ? 1.0 : 0.0;
        e.e_dv = j == 1 ? 1.0 : 0.0;
        e.rho1 = j == 2 ? 1.0 : 0.0;
        e.rho2 = j == 3 ? 1.0 : 0.0;
        const PairError d = closed_loop_error_derivative(params.policy, e, PsiPair{}, params);
        a(0, j) = d.e_dp;
        a(1, j) = d.e_dv;
        a(2, j) = d.rho1;
        if (dim == 4) a(3, j) = d.rho2;
    }
    return a;
}

// ---------------------------------------------------------------------------
// Conditional ISS decrease along a logged run. At every sample where
// |x_i| >= d/(alpha*upsilon) * max_{j<i} |x_j|, the model field must satisfy
// dW/dt <= -(1-upsilon)*alpha*|x_i|^2 (up to tol).

struct IssViolation {
    std::size_t sample = 0;
    int vehicle = 0;
    double t = 0.0;
    double wdot = 0.0;
    double bound = 0.0;
};

struct IssCheckResult {
    std::size_t points_in_region = 0;
    std::size_t points_total = 0;
    std::vector<IssViolation> violations;
    // Certificate-domain problems (e.g. upsilon outside (0,1)); the decrease
    // inequality is only meaningful inside the domain, so these count as
    // flagged violations too.
    std::vector<std::string> domain_flags;

    std::size_t flag_count() const { return violations.size() + domain_flags.size(); }
};

inline IssCheckResult iss_trajectory_check(const TrajectoryLog& log,
                                           const LyapunovConstants& constants,
                                           const ControllerParams& params,
                                           const EquilibriumSpec& eq, double tol = 1e-6) {
    if (constants.policy != params.policy)
        throw std::invalid_argument("iss_trajectory_check: constants/params policy mismatch");
    if (log.rho_dim != rho_dim(params.policy))
        throw std::invalid_argument("iss_trajectory_check: log does not match policy");
    const int n = log.n_vehicles();
    IssCheckResult res;
    if (!(constants.upsilon > 0.0 && constants.upsilon < 1.0))
        res.domain_flags.push_back("upsilon = " + std::to_string(constants.upsilon) +
                                   " outside (0,1); decrease condition not certifiable");
    std::vector<PairError> err(static_cast<std::size_t>(n));
    std::vector<CarFollowingState> pairs(static_cast<std::size_t>(n));
    const double region_gain = constants.d / (constants.alpha * constants.upsilon);
    const double decay = (1.0 - constants.upsilon) * constants.alpha;
    for (std::size_t kk = 0; kk < log.n_samples(); ++kk) {
        for (int i = 0; i < n; ++i) {
            err[static_cast<std::size_t>(i)] = log.error_at(kk, i, eq);
            pairs[static_cast<std::size_t>(i)] = log.pair_at(kk, i);
        }
        double pred_max = 0.0;
        for (int i = 0; i < n; ++i) {
            const std::size_t ui = static_cast<std::size_t>(i);
            const double nrm = err[ui].norm();
            res.points_total++;
            if (nrm >= region_gain * pred_max) {
                res.points_in_region++;
                PsiPair ps;
                if (i > 0) {
                    const std::span<const CarFollowingState> prefix(pairs.data(), ui);
                    ps = psi(aggregate_stats(prefix), eq, params.rho);
                }
                const PairError f =
                    closed_loop_error_derivative(params.policy, err[ui], ps, params);
                const PairError g = lyapunov_w_gradient(params.policy, err[ui], params);
                const double wdot =
                    g.e_dp * f.e_dp + g.e_dv * f.e_dv + g.rho1 * f.rho1 + g.rho2 * f.rho2;
                const double bound = -decay * nrm * nrm;
                if (wdot > bound + tol)
                    res.violations.push_back({kk, i, log.t[kk], wdot, bound});
            }
            pred_max = std::max(pred_max, nrm);
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Empirical string-stability metrics of one run.

struct StringStabilityMetrics {
    std::vector<double> peak;      // A_i = sup_t |x_i(t)|
    std::vector<double> terminal;  // |x_i(t_end)|
    double platoon_peak = 0.0;     // max_i A_i
    double terminal_max = 0.0;
    double initial_max = 0.0;  // max_i |x_i(0)|
    double bound = 0.0;        // string gain * overshoot * initial_max
    bool within_bound = false;
};

inline StringStabilityMetrics string_metrics(const TrajectoryLog& log,
                                             const LyapunovConstants& constants,
                                             const EquilibriumSpec& eq) {
    if (log.rho_dim != rho_dim(constants.policy))
        throw std::invalid_argument("string_metrics: log does not match policy");
    const int n = log.n_vehicles();
    StringStabilityMetrics m;
    m.peak.assign(static_cast<std::size_t>(n), 0.0);
    m.terminal.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        const std::size_t ui = static_cast<std::size_t>(i);
        for (std::size_t kk = 0; kk < log.n_samples(); ++kk)
            m.peak[ui] = std::max(m.peak[ui], log.error_at(kk, i, eq).norm());
        m.terminal[ui] = log.error_at(log.n_samples() - 1, i, eq).norm();
        m.initial_max = std::max(m.initial_max, log.error_at(0, i, eq).norm());
        m.platoon_peak = std::max(m.platoon_peak, m.peak[ui]);
        m.terminal_max = std::max(m.terminal_max, m.terminal[ui]);
    }
    m.bound = 1.0 / (1.0 - constants.gamma_tilde) * constants.overshoot() * m.initial_max;
    m.within_bound = constants.certificate_valid() && m.platoon_peak <= m.bound;
    return m;
}

// How the platoon peak scales across runs of different length N.
struct StringScaling {
    double peak_min = 0.0;
    double peak_max = 0.0;
    double ratio = 0.0;  // peak_max / peak_min

    bool n_independent(double cap = 1.1) const { return ratio <= cap; }
};

inline StringScaling string_scaling(std::span<const StringStabilityMetrics> per_run) {
    if (per_run.empty()) throw std::invalid_argument("string_scaling: no runs");
    StringScaling s;
    s.peak_min = s.peak_max = per_run.front().platoon_peak;
    for (const auto& m : per_run) {
        s.peak_min = std::min(s.peak_min, m.platoon_peak);
        s.peak_max = std::max(s.peak_max, m.platoon_peak);
    }
    s.ratio = s.peak_min > 0.0 ? s.peak_max / s.peak_min : 1.0;
    return s;
}

// ---------------------------------------------------------------------------
// Disturbance attenuation along the string: per-vehicle |dv| peaks in a
// window, for vehicles first..N (the pair (0,1) reacts to the raw
// disturbance, so the profile conventionally starts at i = 2).

struct AttenuationProfile {
    int first = 2;
    std::vector<double> peak_dv;       // index 0 corresponds to vehicle `first`
    double monotone_fraction = 0.0;    // fraction of adjacent non-increases
};

namespace detail {

inline std::pair<std::size_t, std::size_t> window_range(const TrajectoryLog& log, double t0,
                                                        double t1) {
    if (log.n_samples() == 0) throw std::invalid_argument("window: empty log");
    if (!(t0 < t1) || t0 < log.t.front() - 1e-9 || t1 > log.t.back() + 1e-9)
        throw std::invalid_argument("window: [t0,t1] not inside the log");
    std::size_t lo = 0;
    while (lo < log.n_samples() && log.t[lo] < t0 - 1e-9) ++lo;
    std::size_t hi = log.n_samples();
    while (hi > lo && log.t[hi - 1] > t1 + 1e-9) --hi;
    return {lo, hi};
}

}  // namespace detail

inline AttenuationProfile attenuation_profile(const TrajectoryLog& log, double t0, double t1,
                                              int first = 2) {
    const auto [lo, hi] = detail::window_range(log, t0, t1);
    const int n = log.n_vehicles();
    if (first >= n) throw std::invalid_argument("attenuation_profile: first index out of range");
    AttenuationProfile out;
    out.first = first;
    for (int i = first; i < n; ++i) {
        double peak = 0.0;
        const auto& s = log.veh[static_cast<std::size_t>(i)];
        for (std::size_t kk = lo; kk < hi; ++kk) peak = std::max(peak, std::abs(s.dv[kk]));
        out.peak_dv.push_back(peak);
    }
    std::size_t decreases = 0;
    for (std::size_t j = 0; j + 1 < out.peak_dv.size(); ++j)
        if (out.peak_dv[j + 1] <= out.peak_dv[j]) ++decreases;
    out.monotone_fraction =
        out.peak_dv.size() > 1
            ? static_cast<double>(decreases) / static_cast<double>(out.peak_dv.size() - 1)
            : 1.0;
    return out;
}

// Per-vehicle peak gap error |dp + dp_bar| over a window (all vehicles).
inline std::vector<double> window_peak_gap_error(const TrajectoryLog& log,
                                                 const EquilibriumSpec& eq, double t0,
                                                 double t1) {
    const auto [lo, hi] = detail::window_range(log, t0, t1);
    std::vector<double> out(static_cast<std::size_t>(log.n_vehicles()), 0.0);
    for (int i = 0; i < log.n_vehicles(); ++i) {
        const auto& s = log.veh[static_cast<std::size_t>(i)];
        for (std::size_t kk = lo; kk < hi; ++kk)
            out[static_cast<std::size_t>(i)] =
                std::max(out[static_cast<std::size_t>(i)], std::abs(s.dp[kk] + eq.dp_bar));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Integrator order verification. The closed-loop field is smooth only away
// from input saturation, sign changes of the aggregate means, and
// zero-touchings of the two-pair dispersion (an absolute value of the pair
// difference), so convergence order is measured on the maximal initial
// window free of those events.

// First time the logged run leaves the smooth regime (+inf if never).
inline double first_nonsmooth_event(const TrajectoryLog& log, const EquilibriumSpec& eq,
                                    double a_max) {
    const int n = log.n_vehicles();
    std::vector<double> prev_sp(static_cast<std::size_t>(n), 0.0);
    std::vector<double> prev_sv(static_cast<std::size_t>(n), 0.0);
    double prev_ddp = 0.0, prev_ddv = 0.0;
    std::vector<CarFollowingState> pairs(static_cast<std::size_t>(n));
    for (std::size_t k = 0; k < log.n_samples(); ++k) {
        for (int i = 0; i < n; ++i) {
            pairs[static_cast<std::size_t>(i)] = log.pair_at(k, i);
            if (std::abs(log.veh[static_cast<std::size_t>(i)].u_cmd[k]) >= a_max - 1e-9)
                return log.t[k];
        }
        if (n >= 2) {
            const double ddp = sign0(pairs[0].dp - pairs[1].dp);
            const double ddv = sign0(pairs[0].dv - pairs[1].dv);
            if (k > 0 && (ddp * prev_ddp <= 0.0 || ddv * prev_ddv <= 0.0)) return log.t[k];
            prev_ddp = ddp;
            prev_ddv = ddv;
        }
        for (int pre = 2; pre <= n; ++pre) {
            const std::span<const CarFollowingState> prefix(pairs.data(),
                                                            static_cast<std::size_t>(pre));
            const AggregateStats st = aggregate_stats(prefix);
            const double sp = st.var_dp > 1e-18 ? sign0(eq.dp_bar + st.mu_dp) : 0.0;
            const double sv = st.var_dv > 1e-18 ? sign0(st.mu_dv) : 0.0;
            auto& psp = prev_sp[static_cast<std::size_t>(pre - 1)];
            auto& psv = prev_sv[static_cast<std::size_t>(pre - 1)];
            if (k > 0 && (sp * psp < 0.0 || sv * psv < 0.0)) return log.t[k];
            psp = sp;
            psv = sv;
        }
    }
    return std::numeric_limits<double>::infinity();
}

struct OrderCheckResult {
    double first_event = 0.0;  // on the finest grid
    double window_end = 0.0;   // measurement window is [0, window_end]
    double diff_coarse = 0.0;  // sup |x_dt - x_{dt/2}| over the window
    double diff_fine = 0.0;    // sup |x_{dt/2} - x_{dt/4}| over the window
    double ratio = 0.0;
};

inline OrderCheckResult integrator_order_check(const Scenario& sc, double margin = 0.2) {
    Scenario half = sc, quarter = sc;
    half.dt = sc.dt / 2.0;
    quarter.dt = sc.dt / 4.0;
    const TrajectoryLog l1 = simulate(sc);
    const TrajectoryLog l2 = simulate(half);
    const TrajectoryLog l4 = simulate(quarter);

    OrderCheckResult out;
    out.first_event = first_nonsmooth_event(l4, sc.eq, sc.limits.a_max);
    out.window_end = std::min(out.first_event - margin, sc.t_end);
    if (!(out.window_end > 0.0))
        throw std::invalid_argument(
            "integrator_order_check: no smooth initial window in this scenario");

    const auto sup_diff = [&](const TrajectoryLog& coarse, const TrajectoryLog& fine,
                              std::size_t stride) {
        double worst = 0.0;
        for (std::size_t k = 0; k < coarse.n_samples() && coarse.t[k] <= out.window_end; ++k)
            for (int i = 0; i < coarse.n_vehicles(); ++i) {
                const std::size_t ui = static_cast<std::size_t>(i);
                worst = std::max(worst,
                                 std::abs(coarse.veh[ui].dp[k] - fine.veh[ui].dp[k * stride]));
                worst = std::max(worst,
                                 std::abs(coarse.veh[ui].dv[k] - fine.veh[ui].dv[k * stride]));
                worst = std::max(
                    worst, std::abs(coarse.veh[ui].rho1[k] - fine.veh[ui].rho1[k * stride]));
            }
        return worst;
    };
    out.diff_coarse = sup_diff(l1, l2, 2);
    out.diff_fine = sup_diff(l2, l4, 2);
    out.ratio = out.diff_fine > 0.0 ? out.diff_coarse / out.diff_fine
                                    : std::numeric_limits<double>::infinity();
    return out;
}

// ---------------------------------------------------------------------------
// Combined report over one log.

struct StabilityReport {
    LyapunovConstants constants;
    CertificateMatrices cert;
    IssCheckResult iss;
    StringStabilityMetrics string_m;
    AttenuationProfile atten;
    double window_t0 = 0.0;
    double window_t1 = 0.0;
    double min_gap = 0.0;  // min over t, i of -dp_i
};

inline StabilityReport analyze_log(const TrajectoryLog& log, const ControllerParams& params,
                                   const EquilibriumSpec& eq, double window_t0, double window_t1,
                                   double iss_tol = 1e-6) {
    StabilityReport rep;
    rep.constants = lyapunov_constants(params);
    rep.cert = certificate_matrices(params);
    rep.iss = iss_trajectory_check(log, rep.constants, params, eq, iss_tol);
    rep.string_m = string_metrics(log, rep.constants, eq);
    rep.window_t0 = window_t0;
    rep.window_t1 = window_t1;
    if (log.n_vehicles() > 2) rep.atten = attenuation_profile(log, window_t0, window_t1);
    rep.min_gap = std::numeric_limits<double>::infinity();
    for (int i = 0; i < log.n_vehicles(); ++i)
        for (std::size_t kk = 0; kk < log.n_samples(); ++kk)
            rep.min_gap = std::min(rep.min_gap, -log.veh[static_cast<std::size_t>(i)].dp[kk]);
    return rep;
}

inline void write_report_kv(const StabilityReport& rep, std::ostream& os) {
    char buf[40];
    const auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    os << "policy = " << to_string(rep.constants.policy) << "\n";
    os << "alpha_lower = " << num(rep.constants.alpha_lower) << "\n";
    os << "alpha_upper = " << num(rep.constants.alpha_upper) << "\n";
    os << "alpha = " << num(rep.constants.alpha) << "\n";
    os << "d = " << num(rep.constants.d) << "\n";
    os << "upsilon = " << num(rep.constants.upsilon) << "\n";
    os << "gamma_tilde = " << num(rep.constants.gamma_tilde) << "\n";
    os << "certificate_valid = " << (rep.constants.certificate_valid() ? "true" : "false")
       << "\n";
    os << "q_diag_min = " << num(rep.cert.q_diag_min) << "\n";
    os << "matrix_discrepancies = " << rep.cert.discrepancies.size() << "\n";
    os << "sandwich_lower_exact = " << num(rep.cert.sandwich_lower_exact) << "\n";
    os << "sandwich_upper_exact = " << num(rep.cert.sandwich_upper_exact) << "\n";
    os << "decay_rate_exact = " << num(rep.cert.decay_rate_exact) << "\n";
    os << "iss_points_total = " << rep.iss.points_total << "\n";
    os << "iss_points_in_region = " << rep.iss.points_in_region << "\n";
    os << "iss_violations = " << rep.iss.violations.size() << "\n";
    os << "iss_domain_flags = " << rep.iss.domain_flags.size() << "\n";
    os << "string_initial_max = " << num(rep.string_m.initial_max) << "\n";
    os << "string_peak = " << num(rep.string_m.platoon_peak) << "\n";
    os << "string_bound = " << num(rep.string_m.bound) << "\n";
    os << "string_within_bound = " << (rep.string_m.within_bound ? "true" : "false") << "\n";
    os << "terminal_max = " << num(rep.string_m.terminal_max) << "\n";
    os << "min_gap = " << num(rep.min_gap) << "\n";
    os << "window_t0 = " << num(rep.window_t0) << "\n";
    os << "window_t1 = " << num(rep.window_t1) << "\n";
    if (!rep.atten.peak_dv.empty()) {
        os << "atten_first_vehicle = " << rep.atten.first << "\n";
        os << "atten_peak_dv_first = " << num(rep.atten.peak_dv.front()) << "\n";
        os << "atten_peak_dv_last = " << num(rep.atten.peak_dv.back()) << "\n";
        os << "atten_monotone_fraction = " << num(rep.atten.monotone_fraction) << "\n";
    }
}

inline void write_report_text(const StabilityReport& rep, std::ostream& os) {
    os << "Stability report (" << to_string(rep.constants.policy) << ")\n";
    os << "  certificate constants:\n";
    os << "    alpha_lower = " << rep.constants.alpha_lower
       << ", alpha_upper = " << rep.constants.alpha_upper << ", alpha = " << rep.constants.alpha
       << "\n";
    os << "    d = " << rep.constants.d << ", upsilon = " << rep.constants.upsilon
       << ", gamma_tilde = " << rep.constants.gamma_tilde << "\n";
    os << "    certificate "
       << (rep.constants.certificate_valid() ? "PASS (gamma_tilde in (0,1))"
                                             : "FAIL (gamma_tilde or upsilon out of (0,1))")
       << "\n";
    os << "  certificate matrices: Q diagonal min = " << rep.cert.q_diag_min << ", "
       << (rep.cert.diagonals_positive ? "all diagonals positive" : "NON-POSITIVE diagonal")
       << "\n";
    if (rep.cert.discrepancies.empty()) {
        os << "    printed forms consistent with the sum-of-squares expressions\n";
    } else {
        os << "    printed forms disagree with the sum-of-squares expressions at "
           << rep.cert.discrepancies.size() << " entries:\n";
        for (const auto& d : rep.cert.discrepancies) os << "      " << d << "\n";
    }
    os << "  ISS conditional decrease: " << rep.iss.violations.size() << " violations over "
       << rep.iss.points_in_region << " in-region points (of " << rep.iss.points_total << ")\n";
    for (const auto& f : rep.iss.domain_flags) os << "      flag: " << f << "\n";
    for (std::size_t i = 0; i < std::min<std::size_t>(rep.iss.violations.size(), 10); ++i) {
        const auto& v = rep.iss.violations[i];
        os << "      t=" << v.t << " vehicle " << v.vehicle << ": dW/dt=" << v.wdot
           << " > bound " << v.bound << "\n";
    }
    os << "  string metrics: initial max = " << rep.string_m.initial_max
       << ", platoon peak = " << rep.string_m.platoon_peak << ", bound = " << rep.string_m.bound
       << " (" << (rep.string_m.within_bound ? "within" : "NOT within")
       << " bound; bound applies to undisturbed runs)\n";
    os << "    terminal max = " << rep.string_m.terminal_max << "\n";
    os << "  min gap over run = " << rep.min_gap << " m\n";
    os << "  attenuation window [" << rep.window_t0 << ", " << rep.window_t1
       << "] s, vehicles " << rep.atten.first << ".." << rep.atten.first - 1 +
           static_cast<int>(rep.atten.peak_dv.size())
       << ":\n";
    if (!rep.atten.peak_dv.empty()) {
        os << "    |dv| peak first/last = " << rep.atten.peak_dv.front() << " / "
           << rep.atten.peak_dv.back()
           << ", adjacent non-increase fraction = " << rep.atten.monotone_fraction << "\n";
    }
}

}  // namespace meso
