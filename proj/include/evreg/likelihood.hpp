/*
   Copyright 2026 The evreg Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

// Log-likelihood, score, observed and expected information of the maximum
// extreme-value regression model. All block formulas are assembled per
// observation with the diagonal factors kept as vectors.

#pragma once

#include <Eigen/Core>

#include <cmath>

#include "model.hpp"
#include "specfun.hpp"

namespace evreg {

struct ScoreVector {
    Eigen::VectorXd u_beta;
    Eigen::VectorXd u_gamma;
    Eigen::VectorXd flat;
};

enum class InfoKind { observed, expected };

struct InfoMatrix {
    Eigen::MatrixXd full;
    InfoKind kind = InfoKind::observed;

    auto beta_beta(Eigen::Index k) const { return full.topLeftCorner(k, k); }
};

/// sum_t { -log phi_t - z_t - exp(-z_t) }
inline double loglik(const DesignState& s) {
    return -(s.phi.array().log() + s.z.array() + s.zbrev.array()).sum();
}

/// U_beta = X' Phi^-1 T (1 - zbrev),  U_gamma = Z' Phi^-1 H (z - Z zbrev - 1).
inline ScoreVector score(const DesignState& s) {
    const Eigen::ArrayXd wb = s.T.array() / s.phi.array() * (1.0 - s.zbrev.array());
    const Eigen::ArrayXd wg =
        s.H.array() / s.phi.array() * (s.z.array() - s.z.array() * s.zbrev.array() - 1.0);
    ScoreVector u;
    u.u_beta = s.X.transpose() * wb.matrix();
    u.u_gamma = s.Z.transpose() * wg.matrix();
    u.flat.resize(u.u_beta.size() + u.u_gamma.size());
    u.flat << u.u_beta, u.u_gamma;
    return u;
}

namespace detail {

// A' diag(w) B
inline Eigen::MatrixXd weighted_cross(const Eigen::MatrixXd& a, const Eigen::ArrayXd& w, const Eigen::MatrixXd& b) {
    return a.transpose() * (b.array().colwise() * w).matrix();
}

inline InfoMatrix assemble(const Eigen::MatrixXd& bb, const Eigen::MatrixXd& bg, const Eigen::MatrixXd& gg,
                           InfoKind kind) {
    const Eigen::Index k = bb.rows();
    const Eigen::Index m = gg.rows();
    InfoMatrix info;
    info.kind = kind;
    info.full.resize(k + m, k + m);
    info.full.topLeftCorner(k, k) = bb;
    info.full.topRightCorner(k, m) = bg;
    info.full.bottomLeftCorner(m, k) = bg.transpose();
    info.full.bottomRightCorner(m, m) = gg;
    // mirror the upper triangle so the result is symmetric bit for bit
    const Eigen::MatrixXd transposed = info.full.transpose();
    info.full.triangularView<Eigen::StrictlyLower>() = transposed;
    return info;
}

} // namespace detail

/// Observed information J (negative Hessian of the log-likelihood). Needs a
/// state built with Order::hessian when a predictor is nonlinear.
inline InfoMatrix observed_info(const DesignState& s) {
    const Eigen::ArrayXd phi = s.phi.array();
    const Eigen::ArrayXd z = s.z.array();
    const Eigen::ArrayXd zb = s.zbrev.array();
    const Eigen::ArrayXd T = s.T.array();
    const Eigen::ArrayXd H = s.H.array();

    const Eigen::ArrayXd w_bb = T / phi * (zb / phi + (1.0 - zb) * s.S.array() * T) * T;
    const Eigen::ArrayXd w_bg = T / phi * (1.0 - zb + z * zb) * H / phi;
    const Eigen::ArrayXd w_gg =
        H / phi *
        ((-1.0 + 2.0 * z - 2.0 * z * zb + z * z * zb) / phi + (-1.0 + z - z * zb) * s.Q.array() * H) * H;

    Eigen::MatrixXd bb = detail::weighted_cross(s.X, w_bb, s.X);
    Eigen::MatrixXd gg = detail::weighted_cross(s.Z, w_gg, s.Z);
    // bracket products with the second-derivative arrays
    if (!s.Xdot.empty())
        bb -= s.Xdot.weighted_sum(((1.0 - zb) * T / phi).matrix());
    if (!s.Zdot.empty())
        gg += s.Zdot.weighted_sum(((1.0 - z + z * zb) * H / phi).matrix());
    return detail::assemble(bb, detail::weighted_cross(s.X, w_bg, s.Z), gg, InfoKind::observed);
}

/// Expected (Fisher) information I.
inline InfoMatrix expected_info(const DesignState& s) {
    using specfun::euler_gamma;
    const double g2 = specfun::gamma_derivs(2.0).d2;
    const Eigen::ArrayXd phi = s.phi.array();
    const Eigen::ArrayXd T = s.T.array();
    const Eigen::ArrayXd H = s.H.array();
    const Eigen::ArrayXd w_bb = (T / phi).square();
    const Eigen::ArrayXd w_bg = (euler_gamma - 1.0) * T * H / phi.square();
    const Eigen::ArrayXd w_gg = (1.0 + g2) * (H / phi).square();
    return detail::assemble(detail::weighted_cross(s.X, w_bb, s.X), detail::weighted_cross(s.X, w_bg, s.Z),
                            detail::weighted_cross(s.Z, w_gg, s.Z), InfoKind::expected);
}

} // namespace evreg
