#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "meso/aggregates.hpp"
#include "meso/control.hpp"
#include "meso/stability.hpp"

using namespace meso;

namespace {

const EquilibriumSpec kEq{20.0, 14.0};

ControllerParams table1() {
    ControllerParams p;
    p.policy = SpacingPolicy::Constant;
    p.k_dp = 1.0;
    p.k_dv = 2.0;
    p.upsilon = 0.9;
    p.rho.lambda = {1.5, 1.5};
    p.rho.a = p.rho.b = 0.5;
    p.rho.gamma_dp = p.rho.gamma_dv = 0.5;
    return p;
}

ControllerParams table2() {
    ControllerParams p = table1();
    p.policy = SpacingPolicy::Variable;
    p.rho.a = 1.0;
    p.rho.b = 0.2;
    return p;
}

}  // namespace

TEST_CASE("spacing reference per policy") {
    CHECK(spacing_reference(SpacingPolicy::Constant, kEq, {0.7, -0.3}) == -20.0);
    CHECK(spacing_reference(SpacingPolicy::Variable, kEq, {0.2, 123.0}) ==
          Catch::Approx(-20.2));
    CHECK(spacing_reference(SpacingPolicy::Variable, kEq, {0.0, 0.0}) == -20.0);
}

TEST_CASE("constant-spacing law: direct substitution") {
    const auto p = table1();
    // dp=-19, dv=0.5, rho=0.1: e_p=1, dv_ref=-1, dv_ref_dot=-0.5
    // u = -0.5 - 2*(0.5+1) - 1 - 0.1 = -4.6
    const auto dec = control_cp({-19.0, 0.5}, 0.1, 0.0, p, kEq);
    CHECK(dec.u_cmd == Catch::Approx(-4.6).margin(1e-12));
    CHECK(dec.dp_ref == -20.0);
    CHECK(dec.dv_ref == Catch::Approx(-1.0));

    // feedforward enters with unit gain
    const auto shifted = control_cp({-19.0, 0.5}, 0.1, 0.73, p, kEq);
    CHECK(shifted.u_cmd - dec.u_cmd == Catch::Approx(0.73).margin(1e-12));
}

TEST_CASE("variable-spacing law: direct substitution") {
    const auto p = table2();
    // dp=-20, dv=0, rho=(0.2,0.1), psi=0:
    // e_p = 0.2, dv_ref = 0, u = -0.2 + (1-1.5)*0.2 + 1.5*0.1 = -0.15
    const auto dec = control_vp({-20.0, 0.0}, {0.2, 0.1}, PsiPair{}, 0.0, p, kEq);
    CHECK(dec.u_cmd == Catch::Approx(-0.15).margin(1e-12));
    CHECK(dec.dp_ref == Catch::Approx(-20.2));
    CHECK(dec.dv_ref == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("feedforward gain is exactly one (finite difference)") {
    std::mt19937 gen(41);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const CarFollowingState chi{-20.0 + 3.0 * u(gen), 1.5 * u(gen)};
        const std::array<double, 2> rho{0.3 * u(gen), 0.3 * u(gen)};
        const PsiPair ps{0.2 * u(gen), 0.2 * u(gen)};
        const double ul = u(gen);
        const double h = 1e-6;
        const auto cp = table1();
        const double dcp = (control_cp(chi, rho[0], ul + h, cp, kEq).u_cmd -
                            control_cp(chi, rho[0], ul - h, cp, kEq).u_cmd) /
                           (2.0 * h);
        CHECK(dcp == Catch::Approx(1.0).margin(1e-7));
        const auto vp = table2();
        const double dvp = (control_vp(chi, rho, ps, ul + h, vp, kEq).u_cmd -
                            control_vp(chi, rho, ps, ul - h, vp, kEq).u_cmd) /
                           (2.0 * h);
        CHECK(dvp == Catch::Approx(1.0).margin(1e-7));
    }
}

TEST_CASE("with a=b=0 and rho=0 the variable law reduces to the constant one") {
    auto vp = table2();
    vp.rho.a = vp.rho.b = 0.0;
    auto cp = table1();
    std::mt19937 gen(43);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const CarFollowingState chi{-20.0 + 4.0 * u(gen), 2.0 * u(gen)};
        const double ul = u(gen);
        const double uvp = control_vp(chi, {0.0, 0.0}, PsiPair{}, ul, vp, kEq).u_cmd;
        const double ucp = control_cp(chi, 0.0, ul, cp, kEq).u_cmd;
        CHECK(uvp == Catch::Approx(ucp).margin(1e-12));
    }
}

TEST_CASE("interconnection structure of the error field") {
    // at the origin, psi enters only the rho row (constant policy) or the
    // e_dv / rho2 rows with opposite signs (variable policy)
    const PsiPair ps{0.4, -0.3};
    {
        const auto p = table1();
        const double in = p.rho.a * ps.psi_dp + p.rho.b * ps.psi_dv;
        const auto d = closed_loop_error_derivative(SpacingPolicy::Constant, PairError{}, ps, p);
        CHECK(d.e_dp == 0.0);
        CHECK(d.e_dv == 0.0);
        CHECK(d.rho1 == Catch::Approx(in));
        CHECK(d.rho2 == 0.0);
    }
    {
        const auto p = table2();
        const double in = p.rho.a * ps.psi_dp + p.rho.b * ps.psi_dv;
        const auto d = closed_loop_error_derivative(SpacingPolicy::Variable, PairError{}, ps, p);
        CHECK(d.e_dp == 0.0);
        CHECK(d.e_dv == Catch::Approx(-in));
        CHECK(d.rho1 == 0.0);
        CHECK(d.rho2 == Catch::Approx(in));
    }
    // zero psi at the origin gives the zero field
    const auto d0 =
        closed_loop_error_derivative(SpacingPolicy::Variable, PairError{}, PsiPair{}, table2());
    CHECK(d0.e_dp == 0.0);
    CHECK(d0.e_dv == 0.0);
    CHECK(d0.rho1 == 0.0);
    CHECK(d0.rho2 == 0.0);
}

namespace {

// Oracle: hand-written isolated system matrices in error coordinates.
Eigen::Matrix3d cp_matrix(const ControllerParams& p) {
    Eigen::Matrix3d a;
    a << 0.0, 1.0, 0.0,  //
        -(1.0 + p.k_dv * p.k_dp), -(p.k_dp + p.k_dv), -1.0,  //
        0.0, 0.0, -p.rho.lambda[0];
    return a;
}

Eigen::Matrix4d vp_matrix(const ControllerParams& p) {
    const double k = p.k_dp, kv = p.k_dv, l1 = p.rho.lambda[0], l2 = p.rho.lambda[1];
    Eigen::Matrix4d a;
    a << 0.0, 1.0, 0.0, 0.0,  //
        -(1.0 + kv * k), -(kv + k), -1.0 - kv * (k - l1) + (k - l1) * l1,
        -kv - (k - l1) + l2,  //
        0.0, 0.0, -l1, 1.0,   //
        0.0, 0.0, 0.0, -l2;
    return a;
}

double max_real_eig(const Eigen::MatrixXd& a) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(a);
    double mx = -1e300;
    for (Eigen::Index i = 0; i < a.rows(); ++i) mx = std::max(mx, es.eigenvalues()[i].real());
    return mx;
}

}  // namespace

TEST_CASE("isolated error dynamics are linear and Hurwitz") {
    // hand-written oracle matrices match the field evaluated on basis vectors
    {
        const auto p = table1();
        const Eigen::MatrixXd lib = closed_loop_matrix(p);
        CHECK((lib - cp_matrix(p)).cwiseAbs().maxCoeff() < 1e-14);
        CHECK(max_real_eig(lib) < -1e-10);
    }
    {
        const auto p = table2();
        const Eigen::MatrixXd lib = closed_loop_matrix(p);
        CHECK((lib - vp_matrix(p)).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(max_real_eig(lib) < -1e-10);
    }
    // any positive gains keep the isolated system Hurwitz
    std::mt19937 gen(47);
    std::uniform_real_distribution<double> g(0.05, 5.0);
    for (int trial = 0; trial < 200; ++trial) {
        ControllerParams p = table1();
        p.k_dp = g(gen);
        p.k_dv = g(gen);
        p.rho.lambda = {g(gen), g(gen)};
        CHECK(max_real_eig(cp_matrix(p)) < -1e-12);
        p.policy = SpacingPolicy::Variable;
        CHECK(max_real_eig(vp_matrix(p)) < -1e-12);
    }
}

TEST_CASE("variable policy reference consistency: d(e_p)/dt = -k_dp e_p on the slice") {
    const auto p = table2();
    std::mt19937 gen(53);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        PairError x;
        x.e_dp = 2.0 * u(gen);
        x.rho1 = 0.5 * u(gen);
        x.rho2 = 0.5 * u(gen);
        const double e_p = x.e_dp + x.rho1;
        // place dv exactly on its reference
        x.e_dv = p.rho.lambda[0] * x.rho1 - x.rho2 - p.k_dp * e_p;
        const PsiPair ps{0.3 * u(gen), 0.3 * u(gen)};
        const auto d = closed_loop_error_derivative(SpacingPolicy::Variable, x, ps, p);
        const double ep_dot = d.e_dp + d.rho1;
        CHECK(ep_dot == Catch::Approx(-p.k_dp * e_p).margin(1e-12));
    }
}

namespace {

// Dual-path oracle: simulate a 3-vehicle chain once with the raw control laws
// on pair states and once with the error-coordinate field, same RK4 grid.
// No saturation, no disturbances, ideal feedforward chain.
struct RawVeh {
    CarFollowingState chi;
    std::array<double, 2> rho{0.0, 0.0};
};

using Chain = std::vector<std::array<double, 4>>;

template <typename Field>
void rk4_step(const Field& f, Chain& y, double dt) {
    const auto axpy = [&](const Chain& base, const Chain& k, double h) {
        Chain out = base;
        for (std::size_t i = 0; i < base.size(); ++i)
            for (std::size_t c = 0; c < 4; ++c) out[i][c] = base[i][c] + h * k[i][c];
        return out;
    };
    const Chain k1 = f(y);
    const Chain k2 = f(axpy(y, k1, 0.5 * dt));
    const Chain k3 = f(axpy(y, k2, 0.5 * dt));
    const Chain k4 = f(axpy(y, k3, dt));
    for (std::size_t i = 0; i < y.size(); ++i)
        for (std::size_t c = 0; c < 4; ++c)
            y[i][c] += dt / 6.0 * (k1[i][c] + 2.0 * k2[i][c] + 2.0 * k3[i][c] + k4[i][c]);
}

}  // namespace

TEST_CASE("raw-law and error-field simulations coincide") {
    for (const bool variable : {false, true}) {
        const ControllerParams p = variable ? table2() : table1();
        const int n = 3;
        std::mt19937 gen(59);
        std::uniform_real_distribution<double> u(-1.0, 1.0);

        Chain raw(n), err(n);
        for (int i = 0; i < n; ++i) {
            const double ddp = u(gen), ddv = u(gen);
            raw[static_cast<std::size_t>(i)] = {-kEq.dp_bar + ddp, ddv, 0.0, 0.0};
            err[static_cast<std::size_t>(i)] = {ddp, ddv, 0.0, 0.0};
        }

        const auto psi_of_prefix = [&](const std::vector<CarFollowingState>& pairs, int i) {
            if (i == 0) return PsiPair{};
            const std::span<const CarFollowingState> prefix(pairs.data(),
                                                            static_cast<std::size_t>(i));
            return psi(aggregate_stats(prefix), kEq, p.rho);
        };

        const auto raw_field = [&](const Chain& y) {
            std::vector<CarFollowingState> pairs;
            for (const auto& v : y) pairs.push_back({v[0], v[1]});
            Chain d(y.size());
            double u_prev = 0.0;
            for (int i = 0; i < n; ++i) {
                const std::size_t ui = static_cast<std::size_t>(i);
                const std::array<double, 2> rho{y[ui][2], y[ui][3]};
                const PsiPair ps = psi_of_prefix(pairs, i);
                const double uc = evaluate_control(pairs[ui], rho, ps, u_prev, p, kEq).u_cmd;
                d[ui][0] = pairs[ui].dv;
                d[ui][1] = uc - u_prev;
                if (p.policy == SpacingPolicy::Constant) {
                    d[ui][2] = rho_derivative_cp(rho[0], ps, p.rho);
                    d[ui][3] = 0.0;
                } else {
                    const auto dr = rho_derivative_vp(rho, ps, p.rho);
                    d[ui][2] = dr[0];
                    d[ui][3] = dr[1];
                }
                u_prev = uc;
            }
            return d;
        };

        const auto err_field = [&](const Chain& y) {
            std::vector<CarFollowingState> pairs;
            for (const auto& v : y) pairs.push_back({v[0] - kEq.dp_bar, v[1]});
            Chain d(y.size());
            for (int i = 0; i < n; ++i) {
                const std::size_t ui = static_cast<std::size_t>(i);
                const PairError x{y[ui][0], y[ui][1], y[ui][2], y[ui][3]};
                const PsiPair ps = psi_of_prefix(pairs, i);
                const PairError dx = closed_loop_error_derivative(p.policy, x, ps, p);
                d[ui] = {dx.e_dp, dx.e_dv, dx.rho1, dx.rho2};
            }
            return d;
        };

        const double dt = 0.01;
        for (int step = 0; step < 800; ++step) {
            rk4_step(raw_field, raw, dt);
            rk4_step(err_field, err, dt);
        }
        for (int i = 0; i < n; ++i) {
            const std::size_t ui = static_cast<std::size_t>(i);
            CHECK(std::abs((raw[ui][0] + kEq.dp_bar) - err[ui][0]) < 1e-9);
            CHECK(std::abs(raw[ui][1] - err[ui][1]) < 1e-9);
            CHECK(std::abs(raw[ui][2] - err[ui][2]) < 1e-9);
            CHECK(std::abs(raw[ui][3] - err[ui][3]) < 1e-9);
        }
    }
}
