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

// Skovgaard's adjusted likelihood ratio statistic for extreme-value
// regressions: coupling diagonals, the closed forms of qbar and Upsilon-bar,
// zeta and w* = w - 2 log zeta.

#pragma once

#include <Eigen/Core>
#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "estimate.hpp"
#include "likelihood.hpp"
#include "model.hpp"
#include "specfun.hpp"

namespace evreg {

/// Per-observation diagonals coupling an unrestricted (hat) and a
/// restricted (tilde) state.
struct CouplingMatrices {
    Eigen::ArrayXd C;     // phi_hat / phi_tilde
    Eigen::ArrayXd D;     // (mu_hat - mu_tilde) / phi_tilde
    Eigen::ArrayXd Dbrev; // exp(-D)
    Eigen::ArrayXd M;     // Gamma(1 + C)
    Eigen::ArrayXd N;     // Gamma'(1 + C)
    Eigen::ArrayXd P;     // Gamma''(1 + C)
};

struct SkovgaardFlags {
    bool near_zero_w = false;     // w < 1e-8; w* reported as w
    bool zeta_degenerate = false; // a log argument was not positive; w* reported as w
    bool ill_conditioned = false; // some factor has condition number above 1e12
    bool clamped = false;         // w* was negative and clamped to zero

    bool any() const noexcept { return near_zero_w || zeta_degenerate || ill_conditioned || clamped; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        if (near_zero_w)
            out.emplace_back("near_zero_w");
        if (zeta_degenerate)
            out.emplace_back("zeta_degenerate");
        if (ill_conditioned)
            out.emplace_back("ill_conditioned");
        if (clamped)
            out.emplace_back("wstar_clamped");
        return out;
    }
};

struct SkovgaardParts {
    Eigen::VectorXd qbar;
    Eigen::MatrixXd upsilon;
    double zeta = std::numeric_limits<double>::quiet_NaN();
    double log_zeta = std::numeric_limits<double>::quiet_NaN();
    double w = 0.0;
    double w_star = 0.0;
    SkovgaardFlags flags;
};

struct SkovgaardOptions {
    bool clamp_at_zero = false;
    double near_zero_w = 1e-8;
    double condition_limit = 1e12;
};

inline CouplingMatrices coupling(const DesignState& hat, const DesignState& tilde) {
    if (hat.n() != tilde.n())
        throw std::invalid_argument("coupling: states have different numbers of observations");
    const Eigen::Index n = hat.n();
    CouplingMatrices c;
    c.C = hat.phi.array() / tilde.phi.array();
    c.D = (hat.mu.array() - tilde.mu.array()) / tilde.phi.array();
    c.Dbrev = (-c.D).exp();
    c.M.resize(n);
    c.N.resize(n);
    c.P.resize(n);
    for (Eigen::Index t = 0; t < n; ++t) {
        if (!(c.C[t] > 0.0) || !std::isfinite(c.C[t]))
            throw DomainError("dispersion ratio must be positive", static_cast<std::size_t>(t + 1));
        const auto g = specfun::gamma_derivs(1.0 + c.C[t]);
        c.M[t] = g.gamma;
        c.N[t] = g.d1;
        c.P[t] = g.d2;
    }
    return c;
}

/// qbar = [ Xh' Phih^-1 Th C (1 - M Dbrev) ; Zh' Phih^-1 Hh (C (euler + N Dbrev) - 1) ].
inline Eigen::VectorXd qbar(const DesignState& hat, const DesignState& /*tilde*/, const CouplingMatrices& c) {
    const Eigen::ArrayXd lead_b = hat.T.array() / hat.phi.array();
    const Eigen::ArrayXd lead_g = hat.H.array() / hat.phi.array();
    const Eigen::ArrayXd wb = lead_b * c.C * (1.0 - c.M * c.Dbrev);
    const Eigen::ArrayXd wg = lead_g * (c.C * (specfun::euler_gamma + c.N * c.Dbrev) - 1.0);
    Eigen::VectorXd out(hat.k() + hat.m());
    out << hat.X.transpose() * wb.matrix(), hat.Z.transpose() * wg.matrix();
    return out;
}

/// Upsilon-bar; hat factors on the left, tilde factors on the right. Not
/// symmetric in general.
inline Eigen::MatrixXd upsilon_bar(const DesignState& hat, const DesignState& tilde, const CouplingMatrices& c) {
    const Eigen::Index k = hat.k();
    const Eigen::Index m = hat.m();
    const Eigen::ArrayXd lb = hat.T.array() / hat.phi.array();
    const Eigen::ArrayXd lg = hat.H.array() / hat.phi.array();
    const Eigen::ArrayXd rb = tilde.T.array() / tilde.phi.array();
    const Eigen::ArrayXd rg = tilde.H.array() / tilde.phi.array();
    const Eigen::ArrayXd& C = c.C;
    const Eigen::ArrayXd& D = c.D;
    const Eigen::ArrayXd& Db = c.Dbrev;
    const Eigen::ArrayXd& M = c.M;
    const Eigen::ArrayXd& N = c.N;
    const Eigen::ArrayXd& P = c.P;

    const Eigen::ArrayXd w_bb = lb * C * M * Db * rb;
    const Eigen::ArrayXd w_bg = lb * C * (1.0 + Db * (M * D - M - C * N)) * rg;
    const Eigen::ArrayXd w_gb = -lg * C * N * Db * rb;
    const Eigen::ArrayXd w_gg = lg * C * (specfun::euler_gamma + Db * (N + C * P - N * D)) * rg;

    Eigen::MatrixXd out(k + m, k + m);
    out.topLeftCorner(k, k) = detail::weighted_cross(hat.X, w_bb, tilde.X);
    out.topRightCorner(k, m) = detail::weighted_cross(hat.X, w_bg, tilde.Z);
    out.bottomLeftCorner(m, k) = detail::weighted_cross(hat.Z, w_gb, tilde.X);
    out.bottomRightCorner(m, m) = detail::weighted_cross(hat.Z, w_gg, tilde.Z);
    return out;
}

namespace detail {

struct LogDet {
    double log_abs = 0.0;
    int sign = 1;
};

inline LogDet log_det(const Eigen::MatrixXd& a, const char* what) {
    if (a.rows() == 0)
        return {};
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    const Eigen::MatrixXd& u = lu.matrixLU();
    LogDet out;
    out.sign = static_cast<int>(lu.permutationP().determinant());
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        const double d = u(i, i);
        if (d == 0.0 || !std::isfinite(d))
            throw NumericalError(std::string(what) + " is singular");
        if (d < 0.0)
            out.sign = -out.sign;
        out.log_abs += std::log(std::abs(d));
    }
    return out;
}

inline double condition_number(const Eigen::MatrixXd& a) {
    if (a.rows() == 0)
        return 1.0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
    const auto& s = svd.singularValues();
    const double smin = s[s.size() - 1];
    return smin > 0.0 ? s[0] / smin : std::numeric_limits<double>::infinity();
}

inline Eigen::MatrixXd checked_inverse(const Eigen::MatrixXd& a, const char* what) {
    (void)log_det(a, what); // throws when singular
    return a.partialPivLu().inverse();
}

inline Eigen::MatrixXd permute(const Eigen::MatrixXd& a, const std::vector<Eigen::Index>& order) {
    const auto p = static_cast<Eigen::Index>(order.size());
    Eigen::MatrixXd out(p, p);
    for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j < p; ++j)
            out(i, j) = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    return out;
}

inline Eigen::VectorXd permute(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& order) {
    Eigen::VectorXd out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i)
        out[i] = v[order[static_cast<std::size_t>(i)]];
    return out;
}

} // namespace detail

/// w, zeta and w* from an unrestricted and a restricted fit of the same
/// data. Parameters are reordered interest-first before the nuisance blocks
/// are taken. Degenerate zeta or a near-zero w leave w* = w and raise a flag
/// instead of producing NaN.
inline SkovgaardParts adjusted_lr(const FitResult& hat, const FitResult& tilde, const Hypothesis& hypothesis,
                                  const SkovgaardOptions& options = {}) {
    const Eigen::Index p = hat.theta.flat().size();
    if (tilde.theta.flat().size() != p || hat.state.n() != tilde.state.n())
        throw std::invalid_argument("adjusted_lr: fits do not describe the same model and data");
    const auto r = static_cast<Eigen::Index>(hypothesis.r());
    if (r < 1 || r >= p)
        throw std::invalid_argument("adjusted_lr: hypothesis dimension must be in [1, p)");

    // interest coordinates first, nuisance coordinates after, in declaration order
    std::vector<Eigen::Index> order;
    std::vector<bool> is_interest(static_cast<std::size_t>(p), false);
    for (const auto& [name, value] : hypothesis.constraints) {
        const auto i = static_cast<Eigen::Index>(hat.theta.require(name));
        order.push_back(i);
        is_interest[static_cast<std::size_t>(i)] = true;
    }
    for (Eigen::Index i = 0; i < p; ++i)
        if (!is_interest[static_cast<std::size_t>(i)])
            order.push_back(i);
    const Eigen::Index s = p - r;

    SkovgaardParts out;
    const CouplingMatrices c = coupling(hat.state, tilde.state);
    out.qbar = qbar(hat.state, tilde.state, c);
    out.upsilon = upsilon_bar(hat.state, tilde.state, c);
    out.w = likelihood_ratio(hat, tilde);
    out.w_star = out.w;
    if (out.w < options.near_zero_w) {
        out.flags.near_zero_w = true;
        return out;
    }

    const Eigen::MatrixXd Ih = detail::permute(hat.I.full, order);
    const Eigen::MatrixXd It = detail::permute(tilde.I.full, order);
    const Eigen::MatrixXd Jh = detail::permute(hat.J.full, order);
    const Eigen::MatrixXd Jt = detail::permute(tilde.J.full, order);
    const Eigen::MatrixXd Ups = detail::permute(out.upsilon, order);
    const Eigen::VectorXd q = detail::permute(out.qbar, order);
    const Eigen::VectorXd U = detail::permute(tilde.score.flat, order);
    const Eigen::MatrixXd Jt_pp = Jt.bottomRightCorner(s, s);

    for (const Eigen::MatrixXd* a : {&Ih, &It, &Jh, &Ups, &Jt_pp})
        if (detail::condition_number(*a) > options.condition_limit)
            out.flags.ill_conditioned = true;

    const Eigen::MatrixXd ups_inv = detail::checked_inverse(Ups, "Upsilon-bar");
    const Eigen::MatrixXd Ih_inv = detail::checked_inverse(Ih, "expected information at the unrestricted estimate");
    const Eigen::MatrixXd It_inv = detail::checked_inverse(It, "expected information at the restricted estimate");
    const Eigen::MatrixXd Jh_inv = detail::checked_inverse(Jh, "observed information at the unrestricted estimate");

    const detail::LogDet det_It = detail::log_det(It, "expected information at the restricted estimate");
    const detail::LogDet det_Ih = detail::log_det(Ih, "expected information at the unrestricted estimate");
    const detail::LogDet det_Jt_pp = detail::log_det(Jt_pp, "nuisance block of the restricted observed information");
    const detail::LogDet det_ups = detail::log_det(Ups, "Upsilon-bar");
    const Eigen::MatrixXd mixed = It * ups_inv * Jh * Ih_inv * Ups;
    const detail::LogDet det_mixed =
        detail::log_det(Eigen::MatrixXd(mixed.bottomRightCorner(s, s)), "nuisance block of the mixed product");

    const double quad = U.dot(ups_inv * Ih * Jh_inv * Ups * It_inv * U);
    const double denom = U.dot(ups_inv * q);

    // the square-rooted determinants and the r/2 power need positive
    // arguments; the sign of zeta comes from |Upsilon| and the denominator
    const bool roots_ok = det_It.sign > 0 && det_Ih.sign > 0 && det_Jt_pp.sign > 0 && det_mixed.sign > 0 &&
                          quad > 0.0 && std::isfinite(quad);
    const int zeta_sign = det_ups.sign * (denom > 0.0 ? 1 : -1);
    if (!roots_ok || denom == 0.0 || !std::isfinite(denom) || zeta_sign < 0) {
        out.flags.zeta_degenerate = true;
        return out;
    }
    const double half_r = 0.5 * static_cast<double>(r);
    out.log_zeta = 0.5 * (det_It.log_abs + det_Ih.log_abs + det_Jt_pp.log_abs) - det_ups.log_abs -
                   0.5 * det_mixed.log_abs + half_r * std::log(quad) - (half_r - 1.0) * std::log(out.w) -
                   std::log(std::abs(denom));
    if (!std::isfinite(out.log_zeta)) {
        out.flags.zeta_degenerate = true;
        return out;
    }
    out.zeta = std::exp(out.log_zeta);
    out.w_star = out.w - 2.0 * out.log_zeta;
    if (options.clamp_at_zero && out.w_star < 0.0) {
        out.w_star = 0.0;
        out.flags.clamped = true;
    }
    return out;
}

} // namespace evreg
