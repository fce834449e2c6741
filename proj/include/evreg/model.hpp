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

// Extreme-value regression model: links, parameter layout, per-observation
// design quantities, the minimum-to-maximum reduction and response sampling.

#pragma once

#include <Eigen/Core>
#include <Eigen/QR>

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "formula.hpp"
#include "rng.hpp"

namespace evreg {

enum class Family { ev_max, ev_min };
enum class Link { identity, log };

inline const char* to_string(Link link) { return link == Link::identity ? "identity" : "log"; }
inline const char* to_string(Family f) { return f == Family::ev_max ? "max" : "min"; }

/// Inverse link evaluated at a predictor value: the parameter together with
/// 1/g'(param) and g''(param).
struct LinkValues {
    double param;
    double inv_deriv;
    double second;
};

inline LinkValues inverse_link(Link link, double eta) {
    switch (link) {
    case Link::identity: return {eta, 1.0, 0.0};
    case Link::log: {
        const double v = std::exp(eta);
        return {v, v, -1.0 / (v * v)};
    }
    }
    return {eta, 1.0, 0.0};
}

/// Family, links and the two predictors. Location parameters come first in
/// the flat parameter vector.
struct ModelSpec {
    Family family = Family::ev_max;
    Link location_link = Link::identity;
    Link dispersion_link = Link::log;
    formula::PredictorExpr location;
    formula::PredictorExpr dispersion;

    std::size_t k() const { return location.num_params(); }
    std::size_t m() const { return dispersion.num_params(); }
    std::size_t p() const { return k() + m(); }

    std::vector<std::string> parameter_names() const {
        std::vector<std::string> out = location.params();
        out.insert(out.end(), dispersion.params().begin(), dispersion.params().end());
        return out;
    }

    void validate() const {
        if (!location.valid() || !dispersion.valid())
            throw DataError("model is missing a predictor");
        if (k() < 1 || m() < 1)
            throw DataError("each predictor needs at least one parameter");
        for (const auto& a : location.params())
            for (const auto& b : dispersion.params())
                if (a == b)
                    throw DataError("parameter '" + a + "' appears in both predictors");
    }
};

/// Builds a model from formula strings. Identifiers not listed as parameters
/// must be covariate names.
inline ModelSpec make_model(Family family, std::string_view location_formula,
                            const std::vector<std::string>& location_params, Link location_link,
                            std::string_view dispersion_formula,
                            const std::vector<std::string>& dispersion_params, Link dispersion_link,
                            const std::vector<std::string>& covariate_names) {
    ModelSpec m;
    m.family = family;
    m.location_link = location_link;
    m.dispersion_link = dispersion_link;
    m.location = formula::parse_predictor(location_formula, location_params, covariate_names);
    m.dispersion = formula::parse_predictor(dispersion_formula, dispersion_params, covariate_names);
    m.validate();
    return m;
}

/// theta = (beta, gamma), stored flat.
class Theta {
public:
    Theta() = default;
    explicit Theta(const ModelSpec& model)
        : names_(model.parameter_names()), k_(model.k()),
          values_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.p()))) {}
    Theta(const ModelSpec& model, Eigen::VectorXd flat) : Theta(model) {
        if (flat.size() != values_.size())
            throw std::invalid_argument("Theta: flat vector has the wrong length");
        values_ = std::move(flat);
    }

    const Eigen::VectorXd& flat() const noexcept { return values_; }
    Eigen::VectorXd& flat() noexcept { return values_; }
    Eigen::Index size() const noexcept { return values_.size(); }
    std::size_t k() const noexcept { return k_; }
    std::size_t m() const noexcept { return names_.size() - k_; }

    auto beta() const { return values_.head(static_cast<Eigen::Index>(k_)); }
    auto gamma() const { return values_.tail(static_cast<Eigen::Index>(m())); }
    std::span<const double> beta_span() const { return {values_.data(), k_}; }
    std::span<const double> gamma_span() const { return {values_.data() + k_, m()}; }

    const std::vector<std::string>& names() const noexcept { return names_; }

    std::optional<std::size_t> index_of(std::string_view name) const {
        for (std::size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name)
                return i;
        return std::nullopt;
    }

    /// Position of `name`; throws DataError if absent.
    std::size_t require(std::string_view name) const {
        if (auto i = index_of(name))
            return *i;
        throw DataError("unknown parameter '" + std::string(name) + "'");
    }

    double& operator[](std::string_view name) { return values_[static_cast<Eigen::Index>(require(name))]; }
    double operator[](std::string_view name) const {
        return values_[static_cast<Eigen::Index>(require(name))];
    }

    /// "location" or "dispersion" for a flat position.
    const char* block_of(std::size_t i) const { return i < k_ ? "location" : "dispersion"; }

private:
    std::vector<std::string> names_;
    std::size_t k_ = 0;
    Eigen::VectorXd values_;
};

/// Everything the likelihood formulas need at one theta. Diagonal matrices
/// are stored as vectors.
struct DesignState {
    Eigen::VectorXd y;
    Eigen::VectorXd mu;
    Eigen::VectorXd phi;
    Eigen::VectorXd z;     // (y - mu) / phi
    Eigen::VectorXd zbrev; // exp(-z)
    Eigen::VectorXd T;     // 1 / g'(mu)
    Eigen::VectorXd H;     // 1 / h'(phi)
    Eigen::VectorXd S;     // g''(mu)
    Eigen::VectorXd Q;     // h''(phi)
    Eigen::MatrixXd X;     // d eta / d beta'
    Eigen::MatrixXd Z;     // d delta / d gamma'
    formula::Array3 Xdot;  // empty below Order::hessian
    formula::Array3 Zdot;

    Eigen::Index n() const { return mu.size(); }
    Eigen::Index k() const { return X.cols(); }
    Eigen::Index m() const { return Z.cols(); }
};

namespace detail {

inline formula::DerivBundle eval_predictor(const formula::PredictorExpr& expr, std::span<const double> theta,
                                           const ObservationSet& data, formula::Order order) {
    const auto cols = data.columns_for(expr.covariates());
    return expr.evaluate(theta, cols, data.rows(), order);
}

inline void require_max(const ModelSpec& model) {
    if (model.family != Family::ev_max)
        throw std::logic_error("minimum extreme-value models must be reduced with to_max_form first");
}

} // namespace detail

/// mu and phi at theta (covariates only; the response is not touched).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd>
location_dispersion(const ModelSpec& model, const Theta& theta, const ObservationSet& data) {
    const auto eta = detail::eval_predictor(model.location, theta.beta_span(), data, formula::Order::value);
    const auto delta = detail::eval_predictor(model.dispersion, theta.gamma_span(), data, formula::Order::value);
    const Eigen::Index n = data.rows();
    Eigen::VectorXd mu(n), phi(n);
    for (Eigen::Index t = 0; t < n; ++t) {
        mu[t] = inverse_link(model.location_link, eta.value[t]).param;
        phi[t] = inverse_link(model.dispersion_link, delta.value[t]).param;
        if (!(phi[t] > 0.0) || !std::isfinite(phi[t]))
            throw DomainError("dispersion must be positive", static_cast<std::size_t>(t + 1));
        if (!std::isfinite(mu[t]))
            throw DomainError("location is not finite", static_cast<std::size_t>(t + 1));
    }
    return {std::move(mu), std::move(phi)};
}

/// Evaluates every per-observation quantity of a maximum extreme-value
/// model at theta. X and Z are raw predictor derivatives; the link factors
/// live in T and H.
inline DesignState design_state(const ModelSpec& model, const Theta& theta, const ObservationSet& data,
                                formula::Order order = formula::Order::hessian) {
    detail::require_max(model);
    const Eigen::Index n = data.rows();
    if (n <= static_cast<Eigen::Index>(model.p()))
        throw DataError("need more observations (" + std::to_string(n) + ") than parameters (" +
                        std::to_string(model.p()) + ")");
    auto eta = detail::eval_predictor(model.location, theta.beta_span(), data, order);
    auto delta = detail::eval_predictor(model.dispersion, theta.gamma_span(), data, order);

    DesignState s;
    s.y = data.response;
    s.mu.resize(n);
    s.phi.resize(n);
    s.z.resize(n);
    s.zbrev.resize(n);
    s.T.resize(n);
    s.H.resize(n);
    s.S.resize(n);
    s.Q.resize(n);
    for (Eigen::Index t = 0; t < n; ++t) {
        const LinkValues loc = inverse_link(model.location_link, eta.value[t]);
        const LinkValues disp = inverse_link(model.dispersion_link, delta.value[t]);
        if (!(disp.param > 0.0) || !std::isfinite(disp.param))
            throw DomainError("dispersion must be positive", static_cast<std::size_t>(t + 1));
        s.mu[t] = loc.param;
        s.T[t] = loc.inv_deriv;
        s.S[t] = loc.second;
        s.phi[t] = disp.param;
        s.H[t] = disp.inv_deriv;
        s.Q[t] = disp.second;
        s.z[t] = (s.y[t] - s.mu[t]) / s.phi[t];
        s.zbrev[t] = std::exp(-s.z[t]);
        if (!std::isfinite(s.z[t]) || !std::isfinite(s.zbrev[t]))
            throw DomainError("standardized residual overflow", static_cast<std::size_t>(t + 1));
    }
    if (order != formula::Order::value) {
        s.X = std::move(eta.jac);
        s.Z = std::move(delta.jac);
    }
    if (order == formula::Order::hessian) {
        s.Xdot = std::move(eta.hess);
        s.Zdot = std::move(delta.hess);
    }
    return s;
}

/// Numerical rank of a matrix, tolerance 1e-10 relative to its largest
/// pivot.
inline Eigen::Index numerical_rank(const Eigen::MatrixXd& a) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    qr.setThreshold(1e-10);
    return qr.rank();
}

/// Rank warnings for X and Z at a design state (empty when both have full
/// column rank).
inline std::vector<std::string> rank_warnings(const DesignState& s) {
    std::vector<std::string> out;
    if (s.X.size() > 0 && numerical_rank(s.X) < s.X.cols())
        out.push_back("location derivative matrix X is rank deficient");
    if (s.Z.size() > 0 && numerical_rank(s.Z) < s.Z.cols())
        out.push_back("dispersion derivative matrix Z is rank deficient");
    return out;
}

/// Reduces a minimum extreme-value model to the equivalent maximum model on
/// the negated response, with location predictor -g^{-1}(eta) under an
/// identity link. Parameters are unchanged. A maximum model is returned as
/// is.
inline std::pair<ModelSpec, ObservationSet> to_max_form(const ModelSpec& model, const ObservationSet& data) {
    if (model.family == Family::ev_max)
        return {model, data};
    const std::string inner = model.location.to_string();
    const std::string text =
        model.location_link == Link::identity ? "-(" + inner + ")" : "-exp(" + inner + ")";
    ModelSpec out = model;
    out.family = Family::ev_max;
    out.location_link = Link::identity;
    out.location = formula::parse_predictor(text, model.location.params(), model.location.covariates());
    ObservationSet negated = data;
    negated.response = -data.response;
    return {std::move(out), std::move(negated)};
}

/// Draws a response vector by inverse-CDF sampling. Uses one uniform per
/// observation, in observation order.
inline Eigen::VectorXd sample_response(const ModelSpec& model, const Theta& theta, const ObservationSet& covariates,
                                       RngStream& rng) {
    const auto [mu, phi] = location_dispersion(model, theta, covariates);
    const double sign = model.family == Family::ev_max ? -1.0 : 1.0;
    Eigen::VectorXd y(mu.size());
    for (Eigen::Index t = 0; t < y.size(); ++t)
        y[t] = mu[t] + sign * phi[t] * std::log(-std::log(rng.uniform()));
    return y;
}

} // namespace evreg
