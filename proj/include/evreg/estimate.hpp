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

// Unrestricted and restricted maximum-likelihood fitting.

#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "likelihood.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "specfun.hpp"

namespace evreg {

/// H0: each named parameter equals its fixed value.
struct Hypothesis {
    std::vector<std::pair<std::string, double>> constraints;

    std::size_t r() const noexcept { return constraints.size(); }

    /// Flat positions of the constrained parameters, in constraint order.
    std::vector<std::size_t> indices(const ModelSpec& model) const {
        const Theta layout(model);
        std::vector<std::size_t> out;
        for (const auto& [name, value] : constraints) {
            const std::size_t i = layout.require(name);
            if (std::find(out.begin(), out.end(), i) != out.end())
                throw DataError("parameter '" + name + "' is constrained twice");
            out.push_back(i);
        }
        return out;
    }

    void validate(const ModelSpec& model) const {
        if (constraints.empty())
            throw DataError("hypothesis has no constraints");
        if (r() >= model.p())
            throw DataError("hypothesis must leave at least one parameter free");
        for (const auto& [name, value] : constraints)
            if (!std::isfinite(value))
                throw DataError("hypothesis value for '" + name + "' is not finite");
        (void)indices(model);
    }

    Eigen::VectorXd values() const {
        Eigen::VectorXd v(static_cast<Eigen::Index>(r()));
        for (std::size_t i = 0; i < r(); ++i)
            v[static_cast<Eigen::Index>(i)] = constraints[i].second;
        return v;
    }
};

struct FitOptions {
    std::optional<Theta> init;
    std::optional<Hypothesis> restriction;
    int max_iterations = 500;
    double gradient_tolerance = 1e-8;        // times max(1, |loglik|)
    double relative_change_tolerance = 1e-12;
    int newton_polish_steps = 10;
    int restarts = 3;                        // jittered restarts on non-convergence
};

struct FitResult {
    Theta theta;
    double loglik = 0.0;
    double score_norm = 0.0; // infinity norm over the free coordinates
    ScoreVector score;
    InfoMatrix J;
    InfoMatrix I;
    bool converged = false;
    int iterations = 0;
    std::vector<std::string> warnings;
    std::optional<Hypothesis> restriction;
    std::vector<double> trace; // loglik after each accepted step
    DesignState state;
    // maximum form of the model and data the fit was computed on
    std::shared_ptr<const ModelSpec> model;
    std::shared_ptr<const ObservationSet> data;
};

namespace detail {

inline double sample_sd(const Eigen::VectorXd& v) {
    const double mean = v.mean();
    return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(std::max<Eigen::Index>(1, v.size() - 1)));
}

// Least squares of `target` on `design`; nullopt when rank deficient.
inline std::optional<Eigen::VectorXd> least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& target) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < design.cols())
        return std::nullopt;
    return Eigen::VectorXd(qr.solve(target));
}

// Zeros, except the first column that is a nonzero constant receives
// level / c (the intercept of an intercept-bearing predictor).
inline Eigen::VectorXd intercept_only(const Eigen::MatrixXd& design, double level) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(design.cols());
    for (Eigen::Index j = 0; j < design.cols(); ++j) {
        const double c = design(0, j);
        if (c != 0.0 && (design.col(j).array() == c).all()) {
            out[j] = level / c;
            break;
        }
    }
    return out;
}

using Pins = std::vector<std::pair<Eigen::Index, double>>; // (column, fixed coefficient)

inline Eigen::VectorXd pinned_offset(const Eigen::MatrixXd& design, const Pins& pins) {
    Eigen::VectorXd off = Eigen::VectorXd::Zero(design.rows());
    for (const auto& [j, v] : pins)
        off += v * design.col(j);
    return off;
}

// Least squares over the unpinned columns; pinned coefficients keep their
// values. nullopt when the free columns are rank deficient.
inline std::optional<Eigen::VectorXd> least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& target,
                                                    const Pins& pins) {
    if (pins.empty())
        return least_squares(design, target);
    std::vector<Eigen::Index> free;
    for (Eigen::Index j = 0; j < design.cols(); ++j)
        if (std::none_of(pins.begin(), pins.end(), [j](const auto& p) { return p.first == j; }))
            free.push_back(j);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(design.cols());
    for (const auto& [j, v] : pins)
        out[j] = v;
    if (free.empty())
        return out;
    Eigen::MatrixXd sub(design.rows(), static_cast<Eigen::Index>(free.size()));
    for (std::size_t c = 0; c < free.size(); ++c)
        sub.col(static_cast<Eigen::Index>(c)) = design.col(free[c]);
    const auto b = least_squares(sub, target - pinned_offset(design, pins));
    if (!b)
        return std::nullopt;
    for (std::size_t c = 0; c < free.size(); ++c)
        out[free[c]] = (*b)[static_cast<Eigen::Index>(c)];
    return out;
}

inline Eigen::VectorXd intercept_only(const Eigen::MatrixXd& design, double level, const Pins& pins) {
    Eigen::VectorXd out = intercept_only(design, level - pinned_offset(design, pins).mean());
    for (const auto& [j, v] : pins)
        out[j] = v;
    return out;
}

} // namespace detail

/// Deterministic starting values: least squares on the location predictor
/// linearized at zero, intercept shifted by -euler_gamma * phi0, and the
/// dispersion predictor matched to the moment estimate phi0 = sd * sqrt(6) / pi.
/// With a restriction, the pinned coefficients enter as fixed offsets and
/// only the free ones are solved for.
inline Theta default_init(const ModelSpec& model_in, const ObservationSet& data_in,
                          const std::optional<Hypothesis>& restriction = std::nullopt) {
    const auto [model, data] = to_max_form(model_in, data_in);
    detail::Pins bpins, gpins;
    if (restriction) {
        const auto idx = restriction->indices(model);
        const auto k = static_cast<Eigen::Index>(model.k());
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const auto i = static_cast<Eigen::Index>(idx[j]);
            (i < k ? bpins : gpins).emplace_back(i < k ? i : i - k, restriction->constraints[j].second);
        }
    }
    const Eigen::Index n = data.rows();
    const double sd_y = detail::sample_sd(data.response);
    if (!(sd_y > 0.0))
        throw DataError("response is constant; the dispersion is not identifiable");
    const double moment = std::sqrt(6.0) / std::numbers::pi;

    Theta theta(model);
    const Eigen::VectorXd zeros_b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.k()));
    const Eigen::VectorXd zeros_g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.m()));
    const auto loc = detail::eval_predictor(model.location, {zeros_b.data(), model.k()}, data, formula::Order::gradient);
    const auto disp = detail::eval_predictor(model.dispersion, {zeros_g.data(), model.m()}, data, formula::Order::gradient);

    // location target on the predictor scale
    std::optional<Eigen::VectorXd> target = data.response;
    if (model.location_link == Link::log) {
        if ((data.response.array() <= 0.0).any())
            target.reset();
        else
            target = data.response.array().log().matrix();
    }

    double phi0 = sd_y * moment;
    std::optional<Eigen::VectorXd> beta;
    if (target) {
        const Eigen::VectorXd rhs = *target - loc.value;
        if (auto b = detail::least_squares(loc.jac, rhs, bpins)) {
            const Eigen::VectorXd resid = rhs - loc.jac * *b;
            const double sd_r = detail::sample_sd(resid);
            if (sd_r > 1e-8 * sd_y)
                phi0 = sd_r * moment;
            if (model.location_link == Link::identity)
                beta = detail::least_squares(loc.jac, rhs - Eigen::VectorXd::Constant(n, specfun::euler_gamma * phi0),
                                             bpins);
            else
                beta = b;
        }
    }
    if (!beta) {
        phi0 = sd_y * moment;
        const double level = data.response.mean() - specfun::euler_gamma * phi0 - loc.value.mean();
        beta = detail::intercept_only(loc.jac, level, bpins);
    }

    const double dtarget = model.dispersion_link == Link::log ? std::log(phi0) : phi0;
    const Eigen::VectorXd drhs = Eigen::VectorXd::Constant(n, dtarget) - disp.value;
    Eigen::VectorXd gamma =
        detail::least_squares(disp.jac, drhs, gpins).value_or(detail::intercept_only(disp.jac, drhs.mean(), gpins));

    theta.flat() << *beta, gamma;
    // fall back to the intercept-only start when the linearized one is infeasible
    try {
        (void)design_state(model, theta, data, formula::Order::value);
    } catch (const DomainError&) {
        const double level = data.response.mean() - specfun::euler_gamma * sd_y * moment - loc.value.mean();
        theta.flat() << detail::intercept_only(loc.jac, level, bpins), detail::intercept_only(disp.jac, drhs.mean(), gpins);
    }
    return theta;
}

namespace detail {

class Optimizer {
public:
    Optimizer(std::shared_ptr<const ModelSpec> model, std::shared_ptr<const ObservationSet> data,
              const FitOptions& opts)
        : model_ptr_(std::move(model)), data_ptr_(std::move(data)), model_(*model_ptr_), data_(*data_ptr_),
          opts_(opts) {
        const std::size_t p = model_.p();
        std::vector<bool> pinned(p, false);
        if (opts.restriction)
            for (std::size_t i : opts.restriction->indices(model_))
                pinned[i] = true;
        for (std::size_t i = 0; i < p; ++i)
            if (!pinned[i])
                free_.push_back(static_cast<Eigen::Index>(i));
    }

    FitResult run(Eigen::VectorXd start) {
        if (opts_.restriction) {
            const auto idx = opts_.restriction->indices(model_);
            for (std::size_t j = 0; j < idx.size(); ++j)
                start[static_cast<Eigen::Index>(idx[j])] = opts_.restriction->constraints[j].second;
        }
        FitResult best = attempt(start);
        if (best.converged)
            return best;
        // jittered restarts, deterministic
        for (int a = 1; a <= opts_.restarts; ++a) {
            RngStream rng(0x6A177E5ull, static_cast<std::uint64_t>(a));
            Eigen::VectorXd jittered = start;
            for (Eigen::Index i : free_)
                jittered[i] += rng.uniform(-0.5, 0.5) * (0.1 + std::abs(start[i]));
            FitResult r;
            try {
                r = attempt(jittered);
            } catch (const Error&) {
                continue;
            }
            if ((r.converged && !best.converged) ||
                (r.converged == best.converged && r.loglik > best.loglik))
                best = std::move(r);
            if (best.converged)
                break;
        }
        return best;
    }

private:
    struct Point {
        Eigen::VectorXd theta;
        double ll = 0.0;
        Eigen::VectorXd grad; // free coordinates
    };

    Eigen::VectorXd restrict(const Eigen::VectorXd& full) const {
        Eigen::VectorXd out(static_cast<Eigen::Index>(free_.size()));
        for (std::size_t j = 0; j < free_.size(); ++j)
            out[static_cast<Eigen::Index>(j)] = full[free_[j]];
        return out;
    }
    Eigen::MatrixXd restrict(const Eigen::MatrixXd& full) const {
        const auto f = static_cast<Eigen::Index>(free_.size());
        Eigen::MatrixXd out(f, f);
        for (Eigen::Index a = 0; a < f; ++a)
            for (Eigen::Index b = 0; b < f; ++b)
                out(a, b) = full(free_[static_cast<std::size_t>(a)], free_[static_cast<std::size_t>(b)]);
        return out;
    }
    Eigen::VectorXd expand(const Eigen::VectorXd& base, const Eigen::VectorXd& step) const {
        Eigen::VectorXd out = base;
        for (std::size_t j = 0; j < free_.size(); ++j)
            out[free_[j]] += step[static_cast<Eigen::Index>(j)];
        return out;
    }

    std::optional<Point> evaluate(const Eigen::VectorXd& theta) const {
        try {
            const DesignState s = design_state(model_, Theta(model_, theta), data_, formula::Order::gradient);
            const double ll = loglik(s);
            if (!std::isfinite(ll))
                return std::nullopt;
            return Point{theta, ll, restrict(score(s).flat)};
        } catch (const DomainError&) {
            return std::nullopt;
        }
    }

    double tolerance(double ll) const { return opts_.gradient_tolerance * std::max(1.0, std::abs(ll)); }

    Eigen::MatrixXd initial_inverse_hessian(const Eigen::VectorXd& theta) const {
        const auto f = static_cast<Eigen::Index>(free_.size());
        try {
            const DesignState s = design_state(model_, Theta(model_, theta), data_, formula::Order::gradient);
            Eigen::LLT<Eigen::MatrixXd> llt(restrict(expected_info(s).full));
            if (llt.info() == Eigen::Success)
                return llt.solve(Eigen::MatrixXd::Identity(f, f));
        } catch (const DomainError&) {
        }
        return Eigen::MatrixXd::Identity(f, f);
    }

    FitResult attempt(const Eigen::VectorXd& start) {
        auto first = evaluate(start);
        if (!first)
            throw DomainError("log-likelihood is not defined at the starting values");
        Point cur = std::move(*first);
        FitResult res;
        res.trace.push_back(cur.ll);
        int iterations = 0;
        bool converged = false;

        Eigen::MatrixXd hinv = initial_inverse_hessian(cur.theta);
        while (iterations < opts_.max_iterations) {
            if (cur.grad.lpNorm<Eigen::Infinity>() <= tolerance(cur.ll)) {
                converged = true;
                break;
            }
            Eigen::VectorXd dir = hinv * cur.grad;
            double slope = cur.grad.dot(dir);
            if (!(slope > 0.0)) {
                hinv = initial_inverse_hessian(cur.theta);
                dir = hinv * cur.grad;
                slope = cur.grad.dot(dir);
                if (!(slope > 0.0)) {
                    dir = cur.grad;
                    slope = cur.grad.squaredNorm();
                }
            }
            // backtracking Armijo; domain failures count as rejected steps
            std::optional<Point> next;
            double step = 1.0;
            for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
                auto cand = evaluate(expand(cur.theta, step * dir));
                if (cand && cand->ll >= cur.ll + 1e-4 * step * slope) {
                    next = std::move(cand);
                    break;
                }
            }
            if (!next)
                break;
            ++iterations;
            const Eigen::VectorXd s = restrict(Eigen::VectorXd(next->theta - cur.theta));
            const Eigen::VectorXd yv = cur.grad - next->grad; // gradient change of -loglik
            const double sy = s.dot(yv);
            if (sy > 1e-12 * s.norm() * yv.norm()) {
                const double rho = 1.0 / sy;
                const auto f = static_cast<Eigen::Index>(free_.size());
                const Eigen::MatrixXd left = Eigen::MatrixXd::Identity(f, f) - rho * s * yv.transpose();
                hinv = left * hinv * left.transpose() + rho * s * s.transpose();
            }
            const double change = std::abs(next->ll - cur.ll);
            cur = std::move(*next);
            res.trace.push_back(cur.ll);
            if (change <= opts_.relative_change_tolerance * std::max(1.0, std::abs(cur.ll))) {
                converged = true;
                break;
            }
        }

        iterations += polish(cur, res.trace);
        converged = converged || cur.grad.lpNorm<Eigen::Infinity>() <= tolerance(cur.ll);

        res.theta = Theta(model_, cur.theta);
        res.state = design_state(model_, res.theta, data_, formula::Order::hessian);
        res.loglik = loglik(res.state);
        res.score = score(res.state);
        res.score_norm = restrict(res.score.flat).lpNorm<Eigen::Infinity>();
        res.J = observed_info(res.state);
        res.I = expected_info(res.state);
        res.converged = converged && std::isfinite(res.loglik);
        res.iterations = iterations;
        res.restriction = opts_.restriction;
        res.model = model_ptr_;
        res.data = data_ptr_;
        res.warnings = rank_warnings(res.state);
        if (!res.converged)
            res.warnings.push_back("optimizer did not converge");
        return res;
    }

    // Newton steps with the analytic observed information, taken while
    // J is positive definite and the gradient keeps shrinking.
    int polish(Point& cur, std::vector<double>& trace) const {
        int taken = 0;
        for (int it = 0; it < opts_.newton_polish_steps; ++it) {
            const double gnorm = cur.grad.lpNorm<Eigen::Infinity>();
            if (gnorm == 0.0)
                break;
            Eigen::MatrixXd jf;
            try {
                const DesignState s = design_state(model_, Theta(model_, cur.theta), data_, formula::Order::hessian);
                jf = restrict(observed_info(s).full);
            } catch (const DomainError&) {
                break;
            }
            Eigen::LLT<Eigen::MatrixXd> llt(jf);
            if (llt.info() != Eigen::Success)
                break;
            const Eigen::VectorXd dir = llt.solve(cur.grad);
            const double slack = 1e-13 * std::max(1.0, std::abs(cur.ll));
            std::optional<Point> next;
            double step = 1.0;
            for (int ls = 0; ls < 30; ++ls, step *= 0.5) {
                auto cand = evaluate(expand(cur.theta, step * dir));
                if (cand && cand->ll >= cur.ll - slack &&
                    cand->grad.lpNorm<Eigen::Infinity>() < gnorm) {
                    next = std::move(cand);
                    break;
                }
            }
            if (!next)
                break;
            const double new_norm = next->grad.lpNorm<Eigen::Infinity>();
            cur = std::move(*next);
            trace.push_back(cur.ll);
            ++taken;
            if (new_norm > 0.5 * gnorm)
                break;
        }
        return taken;
    }

    std::shared_ptr<const ModelSpec> model_ptr_;
    std::shared_ptr<const ObservationSet> data_ptr_;
    const ModelSpec& model_;
    const ObservationSet& data_;
    const FitOptions& opts_;
    std::vector<Eigen::Index> free_;
};

} // namespace detail

/// Maximizes the log-likelihood over the free coordinates (BFGS with an
/// Armijo line search, finished by a few Newton steps on the analytic
/// observed information). Restricted coordinates are pinned bit-exactly.
/// Minimum models are fitted through their maximum form; the returned theta
/// is in the caller's parameterization either way.
inline FitResult fit_mle(const ModelSpec& model_in, const ObservationSet& data_in, const FitOptions& options = {}) {
    model_in.validate();
    data_in.validate();
    if (options.restriction)
        options.restriction->validate(model_in);
    const auto [model, data] = to_max_form(model_in, data_in);
    const std::size_t free = model.p() - (options.restriction ? options.restriction->r() : 0);
    if (static_cast<std::size_t>(data.rows()) <= free)
        throw DataError("need more observations than free parameters");
    if (!(detail::sample_sd(data.response) > 0.0))
        throw DataError("response is constant; the dispersion is not identifiable");

    Eigen::VectorXd start = options.init ? options.init->flat() : default_init(model, data, options.restriction).flat();
    if (start.size() != static_cast<Eigen::Index>(model.p()))
        throw DataError("initial values have the wrong length");
    detail::Optimizer opt(std::make_shared<const ModelSpec>(model), std::make_shared<const ObservationSet>(data),
                          options);
    return opt.run(std::move(start));
}

/// w = 2 (l(hat) - l(tilde)). The plain difference of two log-likelihoods
/// loses all relative accuracy as w -> 0, and w* inherits that through its
/// log w term. Below w = 1 the difference is instead integrated along the
/// segment from tilde to hat with 8-point Gauss-Legendre on the analytic
/// score, which keeps w relatively accurate down to tiny values.
inline double likelihood_ratio(const FitResult& hat, const FitResult& tilde) {
    const double direct = 2.0 * (hat.loglik - tilde.loglik);
    if (!(std::abs(direct) < 1.0) || !hat.model || !hat.data)
        return direct;
    static constexpr std::array<double, 4> node = {0.1834346424956498, 0.5255324099163290, 0.7966664774136267,
                                                   0.9602898564975363};
    static constexpr std::array<double, 4> weight = {0.3626837833783620, 0.3137066458778873, 0.2223810344533745,
                                                     0.1012285362903763};
    const Eigen::VectorXd& from = tilde.theta.flat();
    const Eigen::VectorXd step = hat.theta.flat() - from;
    double integral = 0.0;
    try {
        for (std::size_t i = 0; i < node.size(); ++i)
            for (double sign : {-1.0, 1.0}) {
                const double s = 0.5 * (1.0 + sign * node[i]);
                const Theta at(*hat.model, from + s * step);
                const auto st = design_state(*hat.model, at, *hat.data, formula::Order::gradient);
                integral += 0.5 * weight[i] * score(st).flat.dot(step);
            }
    } catch (const Error&) {
        return direct;
    }
    // guard against a segment the rule cannot resolve
    if (!std::isfinite(integral) ||
        std::abs(2.0 * integral - direct) > 1e-8 * std::max(1.0, std::abs(hat.loglik)))
        return direct;
    return 2.0 * integral;
}

} // namespace evreg
