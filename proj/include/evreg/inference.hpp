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

// The five test statistics, their chi-square p-values and confidence
// intervals by inverting a chosen test.

#pragma once

#include <Eigen/Core>
#include <Eigen/LU>

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "estimate.hpp"
#include "skovgaard.hpp"
#include "specfun.hpp"

namespace evreg {

enum class Statistic { w, W, S_R, S_T, w_star };

inline constexpr std::array<Statistic, 5> all_statistics = {Statistic::w, Statistic::W, Statistic::S_R,
                                                            Statistic::S_T, Statistic::w_star};

inline const char* to_string(Statistic s) {
    switch (s) {
    case Statistic::w: return "w";
    case Statistic::W: return "W";
    case Statistic::S_R: return "S_R";
    case Statistic::S_T: return "S_T";
    case Statistic::w_star: return "wstar";
    }
    return "?";
}

inline Statistic parse_statistic(std::string_view text) {
    for (Statistic s : all_statistics)
        if (text == to_string(s))
            return s;
    if (text == "w*" || text == "w_star")
        return Statistic::w_star;
    throw UsageError("unknown statistic '" + std::string(text) + "' (expected w, W, S_R, S_T or wstar)");
}

struct TestFlags {
    SkovgaardFlags skovgaard;
    bool unrestricted_not_converged = false;
    bool restricted_not_converged = false;
    bool negative_gradient_statistic = false;

    bool fit_failed() const noexcept { return unrestricted_not_converged || restricted_not_converged; }

    std::vector<std::string> names() const {
        auto out = skovgaard.names();
        if (unrestricted_not_converged)
            out.emplace_back("unrestricted_fit_not_converged");
        if (restricted_not_converged)
            out.emplace_back("restricted_fit_not_converged");
        if (negative_gradient_statistic)
            out.emplace_back("negative_S_T");
        return out;
    }
};

struct TestReport {
    Hypothesis hypothesis;
    int r = 0;
    double w = 0.0;
    double W = 0.0;
    double S_R = 0.0;
    double S_T = 0.0;
    double w_star = 0.0;
    double zeta = std::numeric_limits<double>::quiet_NaN();
    std::array<double, 5> p_values{}; // in all_statistics order
    TestFlags flags;

    double statistic(Statistic s) const {
        switch (s) {
        case Statistic::w: return w;
        case Statistic::W: return W;
        case Statistic::S_R: return S_R;
        case Statistic::S_T: return S_T;
        case Statistic::w_star: return w_star;
        }
        return std::numeric_limits<double>::quiet_NaN();
    }
    double p_value(Statistic s) const { return p_values[static_cast<std::size_t>(s)]; }
};

struct TestOptions {
    FitOptions fit;            // restriction and init are set per fit
    std::optional<Theta> init; // start of the restricted fit
    SkovgaardOptions skovgaard;
};

namespace detail {

inline Eigen::MatrixXd inverse_block(const Eigen::MatrixXd& info, const std::vector<std::size_t>& idx,
                                     const char* what) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(info);
    if (!(std::abs(lu.determinant()) > 0.0))
        throw NumericalError(std::string(what) + " is singular");
    const Eigen::MatrixXd inv = lu.inverse();
    const auto r = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd out(r, r);
    for (Eigen::Index a = 0; a < r; ++a)
        for (Eigen::Index b = 0; b < r; ++b)
            out(a, b) = inv(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(a)]),
                            static_cast<Eigen::Index>(idx[static_cast<std::size_t>(b)]));
    return out;
}

} // namespace detail

/// Wald statistic from the unrestricted fit alone.
inline double wald_statistic(const FitResult& hat, const Hypothesis& hypothesis) {
    std::vector<std::size_t> idx;
    for (const auto& [name, v] : hypothesis.constraints)
        idx.push_back(hat.theta.require(name));
    const Eigen::MatrixXd v = detail::inverse_block(hat.I.full, idx, "expected information at the unrestricted estimate");
    Eigen::VectorXd d(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j)
        d[static_cast<Eigen::Index>(j)] = hat.theta.flat()[static_cast<Eigen::Index>(idx[j])] - hypothesis.constraints[j].second;
    return d.dot(v.partialPivLu().solve(d));
}

/// All five statistics from a pair of fits.
inline TestReport test_statistics(const FitResult& hat, const FitResult& tilde, const Hypothesis& hypothesis,
                                  const SkovgaardOptions& options = {}) {
    TestReport rep;
    rep.hypothesis = hypothesis;
    rep.r = static_cast<int>(hypothesis.r());
    rep.flags.unrestricted_not_converged = !hat.converged;
    rep.flags.restricted_not_converged = !tilde.converged;

    std::vector<std::size_t> idx;
    for (const auto& [name, v] : hypothesis.constraints)
        idx.push_back(hat.theta.require(name));
    const auto r = static_cast<Eigen::Index>(idx.size());
    Eigen::VectorXd d(r), u(r);
    for (Eigen::Index j = 0; j < r; ++j) {
        const auto i = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(j)]);
        d[j] = hat.theta.flat()[i] - hypothesis.constraints[static_cast<std::size_t>(j)].second;
        u[j] = tilde.score.flat[i];
    }
    rep.W = wald_statistic(hat, hypothesis);
    const Eigen::MatrixXd it_nn =
        detail::inverse_block(tilde.I.full, idx, "expected information at the restricted estimate");
    rep.S_R = u.dot(it_nn * u);
    rep.S_T = u.dot(d);
    rep.flags.negative_gradient_statistic = rep.S_T < 0.0;

    const SkovgaardParts sk = adjusted_lr(hat, tilde, hypothesis, options);
    rep.w = sk.w;
    rep.w_star = sk.w_star;
    rep.zeta = sk.zeta;
    rep.flags.skovgaard = sk.flags;

    for (Statistic s : all_statistics)
        rep.p_values[static_cast<std::size_t>(s)] = specfun::chi2_sf(std::max(rep.statistic(s), 0.0), rep.r);
    return rep;
}

struct TestFits {
    FitResult unrestricted;
    FitResult restricted;
};

/// Restricted fit first, then the unrestricted fit warm-started from it.
inline TestFits fit_pair(const ModelSpec& model, const ObservationSet& data, const Hypothesis& hypothesis,
                         const TestOptions& options = {}) {
    hypothesis.validate(model);
    FitOptions ro = options.fit;
    ro.restriction = hypothesis;
    ro.init = options.init;
    TestFits fits;
    fits.restricted = fit_mle(model, data, ro);

    FitOptions uo = options.fit;
    uo.restriction.reset();
    uo.init = fits.restricted.theta;
    fits.unrestricted = fit_mle(model, data, uo);
    // a warm start that lands below the restricted optimum found a poor basin
    if (!fits.unrestricted.converged || fits.unrestricted.loglik < fits.restricted.loglik) {
        uo.init.reset();
        FitResult again = fit_mle(model, data, uo);
        if ((again.converged && !fits.unrestricted.converged) || again.loglik > fits.unrestricted.loglik)
            fits.unrestricted = std::move(again);
    }
    return fits;
}

inline TestReport run_tests(const ModelSpec& model, const ObservationSet& data, const Hypothesis& hypothesis,
                            const TestOptions& options = {}) {
    const TestFits fits = fit_pair(model, data, hypothesis, options);
    return test_statistics(fits.unrestricted, fits.restricted, hypothesis, options.skovgaard);
}

struct ConfidenceInterval {
    std::string parameter;
    double level = 0.95;
    Statistic kind = Statistic::w;
    double estimate = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    bool lower_open = false; // bracketing reached the search limit
    bool upper_open = false;
    bool fit_failures = false; // some refit failed and was stepped around
    int evaluations = 0;
};

struct IntervalOptions {
    TestOptions test;
    double expansion = 1.25;  // geometric growth of the bracket, in SE units
    double max_span = 60.0;   // search limit, in SE units
    double tolerance = 1e-6;  // bisection stops at this many SE
};

/// Inverts the chosen test for one scalar parameter: finds where the
/// statistic crosses the chi-square(1) quantile on each side of the estimate.
inline ConfidenceInterval confidence_interval(const ModelSpec& model, const ObservationSet& data,
                                              const std::string& parameter, double level, Statistic kind,
                                              const IntervalOptions& options = {}) {
    if (!(level > 0.5 && level < 1.0))
        throw UsageError("confidence level must lie in (0.5, 1)");
    FitOptions uo = options.test.fit;
    uo.restriction.reset();
    uo.init = options.test.init;
    const FitResult hat = fit_mle(model, data, uo);
    const std::size_t index = hat.theta.require(parameter);
    const double estimate = hat.theta.flat()[static_cast<Eigen::Index>(index)];
    const double se = std::sqrt(
        detail::inverse_block(hat.I.full, {index}, "expected information at the unrestricted estimate")(0, 0));
    if (!(se > 0.0) || !std::isfinite(se))
        throw NumericalError("standard error of '" + parameter + "' is not positive");
    const double critical = specfun::chi2_quantile(level, 1);

    ConfidenceInterval ci;
    ci.parameter = parameter;
    ci.level = level;
    ci.kind = kind;
    ci.estimate = estimate;

    // statistic minus critical value at nu0; nullopt when the refit fails
    Theta warm = hat.theta;
    auto excess = [&](double nu0) -> std::optional<double> {
        ++ci.evaluations;
        Hypothesis h{{{parameter, nu0}}};
        if (kind == Statistic::W)
            return wald_statistic(hat, h) - critical;
        try {
            FitOptions ro = options.test.fit;
            ro.restriction = h;
            ro.init = warm;
            FitResult tilde = fit_mle(model, data, ro);
            if (!tilde.converged)
                return std::nullopt;
            warm = tilde.theta;
            return test_statistics(hat, tilde, h, options.test.skovgaard).statistic(kind) - critical;
        } catch (const NumericalError&) {
            return std::nullopt;
        } catch (const DomainError&) {
            return std::nullopt;
        }
    };

    auto search = [&](double side, bool& open) -> double {
        warm = hat.theta;
        double inside = estimate; // statistic below the critical value here
        double step = 1.0;
        double outside = std::numeric_limits<double>::quiet_NaN();
        while (true) {
            const double span = std::min(step, options.max_span);
            const double x = estimate + side * span * se;
            const auto f = excess(x);
            if (!f) {
                ci.fit_failures = true;
            } else if (*f >= 0.0) {
                outside = x;
                break;
            } else {
                inside = x;
            }
            if (span >= options.max_span) {
                open = true;
                return x;
            }
            step *= options.expansion;
        }
        // bisection between inside and outside
        warm = hat.theta;
        while (std::abs(outside - inside) > options.tolerance * se) {
            double mid = 0.5 * (inside + outside);
            auto f = excess(mid);
            if (!f) {
                ci.fit_failures = true;
                mid = inside + 0.25 * (outside - inside);
                f = excess(mid);
                if (!f)
                    break;
            }
            (*f >= 0.0 ? outside : inside) = mid;
        }
        return 0.5 * (inside + outside);
    };

    ci.lower = search(-1.0, ci.lower_open);
    ci.upper = search(1.0, ci.upper_open);
    return ci;
}

} // namespace evreg
