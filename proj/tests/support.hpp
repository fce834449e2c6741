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

// Shared fixtures and independent oracles for the test suite. Nothing here
// calls the library's special functions or closed forms; the oracles use
// Boost.Math and straight per-observation loops.

#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <evreg/evreg.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace evtest {

using evreg::ModelSpec;
using evreg::ObservationSet;
using evreg::Theta;

inline ModelSpec model1(evreg::Family family = evreg::Family::ev_max) {
    return evreg::make_model(family, "b1 + b2*x2 + b3*x3 + b4*x4 + b5*x5", {"b1", "b2", "b3", "b4", "b5"},
                             evreg::Link::identity, "g1", {"g1"}, evreg::Link::log, {"x2", "x3", "x4", "x5"});
}

inline Theta model1_truth(const ModelSpec& m, double phi = 0.1) {
    Theta t(m);
    t.flat() << 1.0, 0.0, 1.0, 6.0, -3.0, std::log(phi);
    return t;
}

inline ModelSpec model2() {
    return evreg::make_model(evreg::Family::ev_max, "b1 + b2*x2 + b3*x3 + b4*x4", {"b1", "b2", "b3", "b4"},
                             evreg::Link::identity, "g1 + g2*z2 + g3*z3 + g4*z4", {"g1", "g2", "g3", "g4"},
                             evreg::Link::log, {"x2", "x3", "x4", "z2", "z3", "z4"});
}

inline Theta model2_truth(const ModelSpec& m) {
    Theta t(m);
    t.flat() << 1.0, 1.0, 6.0, 0.0, std::log(0.1), -2.0, -2.0, 0.1;
    return t;
}

inline ModelSpec model3() {
    return evreg::make_model(evreg::Family::ev_max, "b0 + b1*x1 + pow(x2, b2)", {"b0", "b1", "b2"},
                             evreg::Link::identity, "g1", {"g1"}, evreg::Link::log, {"x1", "x2"});
}

inline Theta model3_truth(const ModelSpec& m) {
    Theta t(m);
    t.flat() << 1.0, 1.0, 0.0, 0.1;
    return t;
}

/// Covariates drawn uniformly on [lo, hi], response simulated at theta.
inline ObservationSet simulate_data(const ModelSpec& model, const Theta& theta, Eigen::Index n, std::uint64_t seed,
                                    double lo = -0.5, double hi = 0.5) {
    evreg::SimulationConfig cfg;
    cfg.model = model;
    cfg.theta = theta;
    cfg.n = n;
    cfg.covariates.lower = lo;
    cfg.covariates.upper = hi;
    cfg.design_seed = seed;
    ObservationSet d = evreg::draw_design(cfg);
    evreg::RngStream rng(seed, 7);
    d.response = evreg::sample_response(model, theta, d, rng);
    return d;
}

/// Random point near theta (each coordinate shifted by up to `spread`).
inline Theta jitter(const Theta& theta, const ModelSpec& model, evreg::RngStream& rng, double spread) {
    Theta t(model, theta.flat());
    for (Eigen::Index i = 0; i < t.size(); ++i)
        t.flat()[i] += rng.uniform(-spread, spread);
    return t;
}

/// Log-likelihood at theta, written straight from the density; no library
/// likelihood code involved.
inline double direct_loglik(const ModelSpec& model, const Eigen::VectorXd& theta, const ObservationSet& data) {
    const auto [mu, phi] = evreg::location_dispersion(model, Theta(model, theta), data);
    double ll = 0.0;
    for (Eigen::Index t = 0; t < data.rows(); ++t) {
        const double z = (data.response[t] - mu[t]) / phi[t];
        ll += -std::log(phi[t]) - z - std::exp(-z);
    }
    return ll;
}

/// Richardson-extrapolated central differences of a scalar function.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                   double h = 1e-3) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        auto diff = [&](double step) {
            Eigen::VectorXd a = x, b = x;
            a[i] += step;
            b[i] -= step;
            return (f(a) - f(b)) / (2.0 * step);
        };
        const double d1 = diff(h), d2 = diff(h / 2), d3 = diff(h / 4);
        const double r1 = (4.0 * d2 - d1) / 3.0, r2 = (4.0 * d3 - d2) / 3.0;
        g[i] = (16.0 * r2 - r1) / 15.0;
    }
    return g;
}

/// Hessian from Richardson-extrapolated differences of an analytic gradient.
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& g,
                                   const Eigen::VectorXd& x, double h = 1e-3) {
    const Eigen::Index p = x.size();
    Eigen::MatrixXd out(p, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        auto diff = [&](double step) {
            Eigen::VectorXd a = x, b = x;
            a[j] += step;
            b[j] -= step;
            return Eigen::VectorXd((g(a) - g(b)) / (2.0 * step));
        };
        const Eigen::VectorXd d1 = diff(h), d2 = diff(h / 2), d3 = diff(h / 4);
        const Eigen::VectorXd r1 = (4.0 * d2 - d1) / 3.0, r2 = (4.0 * d3 - d2) / 3.0;
        out.col(j) = (16.0 * r2 - r1) / 15.0;
    }
    return out;
}

/// Hessian of a scalar function by second central differences with one
/// Richardson step.
inline Eigen::MatrixXd fd_hessian(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                  double h = 1e-3) {
    const Eigen::Index p = x.size();
    Eigen::MatrixXd out(p, p);
    auto mixed = [&](Eigen::Index i, Eigen::Index j, double s) {
        Eigen::VectorXd pp = x, pm = x, mp = x, mm = x;
        pp[i] += s; pp[j] += s;
        pm[i] += s; pm[j] -= s;
        mp[i] -= s; mp[j] += s;
        mm[i] -= s; mm[j] -= s;
        return (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * s * s);
    };
    for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = i; j < p; ++j) {
            const double a = mixed(i, j, h), b = mixed(i, j, h / 2);
            out(i, j) = out(j, i) = (4.0 * b - a) / 3.0;
        }
    return out;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

/// max |a - b| / max(|b|, tiny), the normwise relative error of a against b.
inline double normwise_rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-300);
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

/// E[g(u)] for u ~ standard EVmax, by adaptive Gauss-Kronrod over the line.
inline double gumbel_expectation(const std::function<double(double)>& g) {
    using boost::math::quadrature::gauss_kronrod;
    auto integrand = [&](double u) {
        const double density = std::exp(-u - std::exp(-u));
        return density == 0.0 ? 0.0 : g(u) * density;
    };
    const double inf = std::numeric_limits<double>::infinity();
    double err = 0.0;
    const double left = gauss_kronrod<double, 61>::integrate(integrand, -inf, 0.0, 20, 1e-14, &err);
    const double right = gauss_kronrod<double, 61>::integrate(integrand, 0.0, inf, 20, 1e-14, &err);
    return left + right;
}

struct CrossExpectations {
    Eigen::VectorXd q;
    Eigen::MatrixXd upsilon;
};

/// q = E_1[U(theta1) (l(theta1) - l(theta))] and Upsilon = E_1[U(theta1) U(theta)']
/// by per-observation quadrature over y ~ EVmax(mu1_t, phi1_t). `one` holds
/// the theta1 design state, `base` the theta one.
inline CrossExpectations quadrature_oracle(const evreg::DesignState& one, const evreg::DesignState& base) {
    const Eigen::Index n = one.n(), k = one.k(), m = one.m();
    CrossExpectations out;
    out.q = Eigen::VectorXd::Zero(k + m);
    out.upsilon = Eigen::MatrixXd::Zero(k + m, k + m);
    for (Eigen::Index t = 0; t < n; ++t) {
        const double mu1 = one.mu[t], phi1 = one.phi[t], mu = base.mu[t], phi = base.phi[t];
        auto z_of = [&](double u) { return (mu1 + phi1 * u - mu) / phi; };
        auto sb1 = [&](double u) { return 1.0 - std::exp(-u); };                 // location score factor at theta1
        auto sg1 = [&](double u) { return u - u * std::exp(-u) - 1.0; };          // dispersion score factor at theta1
        auto sb0 = [&](double u) { return 1.0 - std::exp(-z_of(u)); };
        auto sg0 = [&](double u) { const double z = z_of(u); return z - z * std::exp(-z) - 1.0; };
        auto dl = [&](double u) {
            const double z = z_of(u);
            return (-std::log(phi1) - u - std::exp(-u)) - (-std::log(phi) - z - std::exp(-z));
        };
        const double Eb_l = gumbel_expectation([&](double u) { return sb1(u) * dl(u); });
        const double Eg_l = gumbel_expectation([&](double u) { return sg1(u) * dl(u); });
        const double Ebb = gumbel_expectation([&](double u) { return sb1(u) * sb0(u); });
        const double Ebg = gumbel_expectation([&](double u) { return sb1(u) * sg0(u); });
        const double Egb = gumbel_expectation([&](double u) { return sg1(u) * sb0(u); });
        const double Egg = gumbel_expectation([&](double u) { return sg1(u) * sg0(u); });

        const Eigen::VectorXd a_b = one.X.row(t).transpose() * (one.T[t] / phi1);
        const Eigen::VectorXd a_g = one.Z.row(t).transpose() * (one.H[t] / phi1);
        const Eigen::VectorXd c_b = base.X.row(t).transpose() * (base.T[t] / phi);
        const Eigen::VectorXd c_g = base.Z.row(t).transpose() * (base.H[t] / phi);
        out.q.head(k) += a_b * Eb_l;
        out.q.tail(m) += a_g * Eg_l;
        out.upsilon.topLeftCorner(k, k) += a_b * c_b.transpose() * Ebb;
        out.upsilon.topRightCorner(k, m) += a_b * c_g.transpose() * Ebg;
        out.upsilon.bottomLeftCorner(m, k) += a_g * c_b.transpose() * Egb;
        out.upsilon.bottomRightCorner(m, m) += a_g * c_g.transpose() * Egg;
    }
    return out;
}

} // namespace evtest
