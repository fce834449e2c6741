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

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "support.hpp"

namespace {

using namespace evreg;

FitResult fit(const ModelSpec& m, const ObservationSet& d, std::optional<Hypothesis> h = std::nullopt,
              std::optional<Theta> init = std::nullopt) {
    FitOptions o;
    o.restriction = std::move(h);
    o.init = std::move(init);
    return fit_mle(m, d, o);
}

TEST(Estimate, ConsistentAtLargeN) {
    for (const auto& [m, truth] : {std::pair{evtest::model1(), evtest::model1_truth(evtest::model1())},
                                   std::pair{evtest::model2(), evtest::model2_truth(evtest::model2())}}) {
        const auto d = evtest::simulate_data(m, truth, 5000, 101);
        const FitResult r = fit(m, d);
        ASSERT_TRUE(r.converged);
        const Eigen::MatrixXd cov = r.I.full.inverse();
        for (Eigen::Index i = 0; i < truth.size(); ++i)
            EXPECT_LE(std::abs(r.theta.flat()[i] - truth.flat()[i]), 3.0 * std::sqrt(cov(i, i))) << i;
    }
}

TEST(Estimate, ConvergedMeansSmallFreeGradient) {
    const auto m = evtest::model2();
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto d = evtest::simulate_data(m, evtest::model2_truth(m), 40, 110 + seed);
        const FitResult r = fit(m, d);
        if (!r.converged)
            continue;
        EXPECT_TRUE(std::isfinite(r.loglik));
        EXPECT_LE(r.score_norm, 1e-8 * std::max(1.0, std::abs(r.loglik))) << seed;
        EXPECT_LE(r.score.flat.lpNorm<Eigen::Infinity>(), 1e-8 * std::max(1.0, std::abs(r.loglik))) << seed;
    }
}

TEST(Estimate, RestrictedCoordinatesAreBitExact) {
    const auto m = evtest::model2();
    const auto d = evtest::simulate_data(m, evtest::model2_truth(m), 40, 120);
    const double odd = 0.1 + 0.2; // not representable as written
    const Hypothesis h{{{"b4", odd}, {"g3", -2.0}}};
    const FitResult r = fit(m, d, h);
    EXPECT_EQ(r.theta["b4"], odd);
    EXPECT_EQ(r.theta["g3"], -2.0);
    ASSERT_TRUE(r.restriction.has_value());
    // free-coordinate gradient only; the pinned entries of U need not vanish
    const auto idx = h.indices(m);
    for (Eigen::Index i = 0; i < r.score.flat.size(); ++i)
        if (std::find(idx.begin(), idx.end(), static_cast<std::size_t>(i)) == idx.end()) {
            EXPECT_LE(std::abs(r.score.flat[i]), 1e-8 * std::max(1.0, std::abs(r.loglik))) << i;
        }
}

TEST(Estimate, OneFreeInterceptIsOneDimensional) {
    const auto m = evtest::model1();
    const Theta truth = evtest::model1_truth(m);
    const auto d = evtest::simulate_data(m, truth, 30, 121);
    Hypothesis h;
    for (const char* name : {"b2", "b3", "b4", "b5", "g1"})
        h.constraints.emplace_back(name, truth[name]);
    const FitResult r = fit(m, d, h);
    ASSERT_TRUE(r.converged);
    EXPECT_LE(std::abs(r.score.flat[0]), 1e-8);
    // closed form: b1 = phi * log(n / sum exp(-(y - rest)/phi))
    const double phi = std::exp(truth["g1"]);
    double s = 0.0;
    for (Eigen::Index t = 0; t < d.rows(); ++t) {
        const double rest = truth["b3"] * d.covariate("x3")[t] + truth["b4"] * d.covariate("x4")[t] +
                            truth["b5"] * d.covariate("x5")[t];
        s += std::exp(-(d.response[t] - rest) / phi);
    }
    EXPECT_NEAR(r.theta["b1"], phi * std::log(static_cast<double>(d.rows()) / s), 1e-10);
}

TEST(Estimate, TraceIsMonotone) {
    const auto m = evtest::model2();
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto d = evtest::simulate_data(m, evtest::model2_truth(m), 40, 130 + seed);
        const FitResult r = fit(m, d);
        ASSERT_FALSE(r.trace.empty());
        for (std::size_t i = 1; i < r.trace.size(); ++i)
            EXPECT_GE(r.trace[i], r.trace[i - 1] - 1e-13 * std::max(1.0, std::abs(r.trace[i - 1]))) << seed << ' ' << i;
    }
}

TEST(Estimate, RefitFromOptimumIsImmediate) {
    const auto m = evtest::model2();
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto d = evtest::simulate_data(m, evtest::model2_truth(m), 40, 140 + seed);
        const FitResult a = fit(m, d);
        if (!a.converged)
            continue;
        const FitResult b = fit(m, d, std::nullopt, a.theta);
        EXPECT_TRUE(b.converged);
        EXPECT_LE(b.iterations, 2) << seed;
        EXPECT_LE((b.theta.flat() - a.theta.flat()).lpNorm<Eigen::Infinity>(), 1e-8) << seed;
    }
}

TEST(Estimate, RestrictedNeverBeatsUnrestricted) {
    const auto m = evtest::model1();
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto d = evtest::simulate_data(m, evtest::model1_truth(m), 15, 150 + seed);
        const Hypothesis h{{{"b2", 0.0}}};
        const auto fits = fit_pair(m, d, h);
        EXPECT_GE(2.0 * (fits.unrestricted.loglik - fits.restricted.loglik), -1e-9) << seed;
    }
}

TEST(DefaultInit, InterceptOnlyMomentInversion) {
    const auto m = make_model(Family::ev_max, "b0", {"b0"}, Link::identity, "g0", {"g0"}, Link::log, {});
    ObservationSet d;
    d.response.resize(7);
    d.response << 1.0, 2.5, -0.3, 4.0, 2.2, 0.9, 3.1;
    const Theta t = default_init(m, d);
    const double sd = std::sqrt((d.response.array() - d.response.mean()).square().sum() / 6.0);
    const double phi0 = sd * std::sqrt(6.0) / std::numbers::pi;
    EXPECT_NEAR(t["b0"], d.response.mean() - 0.5772156649015329 * phi0, 1e-12);
    EXPECT_NEAR(t["g0"], std::log(phi0), 1e-12);

    const auto mi = make_model(Family::ev_max, "b0", {"b0"}, Link::identity, "g0", {"g0"}, Link::identity, {});
    EXPECT_NEAR(default_init(mi, d)["g0"], phi0, 1e-12);
}

TEST(DefaultInit, MomentDispersionMatchesVariance) {
    // var(y) = phi^2 pi^2 / 6 for a homogeneous sample
    const auto m = make_model(Family::ev_max, "b0", {"b0"}, Link::identity, "g0", {"g0"}, Link::log, {});
    Theta truth(m);
    truth.flat() << 2.0, std::log(3.0);
    ObservationSet d;
    d.response = Eigen::VectorXd::Zero(200000);
    RngStream rng(160, 0);
    d.response = sample_response(m, truth, d, rng);
    EXPECT_NEAR(std::exp(default_init(m, d)["g0"]), 3.0, 0.03);
}

TEST(DefaultInit, CollinearDesignFallsBack) {
    const auto m = make_model(Family::ev_max, "b0 + b1*x + b2*xx", {"b0", "b1", "b2"}, Link::identity, "g0", {"g0"},
                              Link::log, {"x", "xx"});
    ObservationSet d;
    const Eigen::Index n = 40;
    RngStream rng(161, 0);
    Eigen::VectorXd x(n), y(n);
    for (Eigen::Index t = 0; t < n; ++t) {
        x[t] = rng.uniform(-1.0, 1.0);
        y[t] = -std::log(-std::log(rng.uniform()));
    }
    d.response = y;
    d.covariate_names = {"x", "xx"};
    d.covariates = {x, 2.0 * x};
    const Theta t = default_init(m, d);
    EXPECT_EQ(t["b1"], 0.0);
    EXPECT_EQ(t["b2"], 0.0);
    const double phi0 = evreg::detail::sample_sd(y) * std::sqrt(6.0) / std::numbers::pi;
    EXPECT_NEAR(t["b0"], y.mean() - 0.5772156649015329 * phi0, 1e-12);

    const FitResult r = fit(m, d);
    EXPECT_FALSE(r.warnings.empty());
    EXPECT_TRUE(std::isfinite(r.loglik));
    // the identifiable combination b1 + 2 b2 is what the data pin down
    const auto s = fit(make_model(Family::ev_max, "b0 + b1*x", {"b0", "b1"}, Link::identity, "g0", {"g0"}, Link::log,
                                  {"x"}),
                       d);
    EXPECT_NEAR(r.loglik, s.loglik, 1e-8 * std::abs(s.loglik));
    EXPECT_NEAR(r.theta["b1"] + 2.0 * r.theta["b2"], s.theta["b1"], 1e-5);
}

// A restriction far from the data must not leave the start with a
// dispersion sized for the unrestricted residuals.
TEST(DefaultInit, RestrictionEntersAsOffset) {
    const auto m = evtest::model1();
    Theta truth = evtest::model1_truth(m);
    truth.flat()[1] = 6.0;
    const auto d = evtest::simulate_data(m, truth, 15, 175);
    const Hypothesis h{{{"b2", 0.0}}};
    const Theta t = default_init(m, d, h);
    EXPECT_EQ(t["b2"], 0.0);
    // moment estimate from residuals of the restricted least squares
    Eigen::MatrixXd X(15, 4);
    X << Eigen::VectorXd::Ones(15), d.covariate("x3"), d.covariate("x4"), d.covariate("x5");
    const Eigen::VectorXd b = X.colPivHouseholderQr().solve(d.response);
    const double phi0 = evreg::detail::sample_sd(d.response - X * b) * std::sqrt(6.0) / std::numbers::pi;
    EXPECT_NEAR(t["g1"], std::log(phi0), 1e-10);
    FitOptions o;
    o.restriction = h;
    EXPECT_TRUE(fit_mle(m, d, o).converged);
}

TEST(Estimate, ConstantResponseIsRejected) {
    const auto m = evtest::model1();
    auto d = evtest::simulate_data(m, evtest::model1_truth(m), 20, 170);
    d.response.setConstant(1.5);
    EXPECT_THROW(fit(m, d), DataError);
}

TEST(Estimate, TooFewObservationsIsRejected) {
    const auto m = evtest::model1();
    Theta truth = evtest::model1_truth(m);
    auto d = evtest::simulate_data(m, truth, 7, 171);
    EXPECT_NO_THROW(fit(m, d, Hypothesis{{{"b2", 0.0}}}));
    auto d6 = evtest::simulate_data(m, truth, 6, 171);
    EXPECT_THROW(fit(m, d6), DataError);
}

// Minimum-model likelihood coded directly from its density, in the caller's
// parameterization, with no reduction.
double direct_min_loglik(const ModelSpec& m, const Eigen::VectorXd& theta, const ObservationSet& d) {
    const auto [mu, phi] = location_dispersion(m, Theta(m, theta), d);
    double ll = 0.0;
    for (Eigen::Index t = 0; t < d.rows(); ++t) {
        const double z = (d.response[t] - mu[t]) / phi[t];
        ll += -std::log(phi[t]) + z - std::exp(z);
    }
    return ll;
}

TEST(Estimate, MinimumFamilyMatchesDirectLikelihood) {
    const auto m = evtest::model1(Family::ev_min);
    Theta truth = evtest::model1_truth(m);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto d = evtest::simulate_data(m, truth, 40, 180 + seed);
        const FitResult r = fit(m, d);
        ASSERT_TRUE(r.converged);
        const Eigen::VectorXd th = r.theta.flat();
        auto f = [&](const Eigen::VectorXd& v) { return direct_min_loglik(m, v, d); };
        EXPECT_NEAR(f(th), r.loglik, 1e-10 * std::abs(r.loglik));
        // one Newton step on the direct likelihood from the reduced-path MLE
        const Eigen::VectorXd g = evtest::fd_gradient(f, th, 1e-3);
        const Eigen::MatrixXd hess = evtest::fd_hessian(f, th, 1e-3);
        const Eigen::VectorXd step = hess.lu().solve(g);
        EXPECT_LE(step.lpNorm<Eigen::Infinity>(), 1e-8) << seed;
        EXPECT_LT(hess.eigenvalues().real().maxCoeff(), 0.0);
    }
}

TEST(Estimate, MinimumFamilyMirrorsMaximumFamily) {
    const auto mx = evtest::model1();
    const auto mn = evtest::model1(Family::ev_min);
    const Theta truth = evtest::model1_truth(mx);
    auto d = evtest::simulate_data(mx, truth, 30, 190);
    const FitResult a = fit(mx, d);
    d.response = -d.response;
    const FitResult b = fit(mn, d);
    EXPECT_NEAR(a.loglik, b.loglik, 1e-9 * std::abs(a.loglik));
    for (const char* name : {"b1", "b2", "b3", "b4", "b5"})
        EXPECT_NEAR(a.theta[name], -b.theta[name], 1e-8) << name;
    EXPECT_NEAR(a.theta["g1"], b.theta["g1"], 1e-8);
}

TEST(Estimate, NonlinearPredictorConverges) {
    const auto m = evtest::model3();
    const auto d = evtest::simulate_data(m, evtest::model3_truth(m), 50, 200, 0.0, 1.0);
    const FitResult r = fit(m, d);
    EXPECT_TRUE(r.converged);
    const Eigen::VectorXd g = evtest::fd_gradient(
        [&](const Eigen::VectorXd& v) { return evtest::direct_loglik(m, v, d); }, r.theta.flat(), 1e-4);
    EXPECT_LE(g.lpNorm<Eigen::Infinity>(), 1e-6);
}

TEST(Hypothesis, Validation) {
    const auto m = evtest::model1();
    EXPECT_THROW(Hypothesis{}.validate(m), DataError);
    EXPECT_THROW((Hypothesis{{{"b2", 0.0}, {"b2", 1.0}}}.validate(m)), DataError);
    EXPECT_THROW((Hypothesis{{{"nope", 0.0}}}.validate(m)), DataError);
    EXPECT_THROW((Hypothesis{{{"b2", std::nan("")}}}.validate(m)), DataError);
    EXPECT_THROW((Hypothesis{{{"b1", 0}, {"b2", 0}, {"b3", 0}, {"b4", 0}, {"b5", 0}, {"g1", 0}}}.validate(m)), DataError);
    EXPECT_NO_THROW((Hypothesis{{{"g1", 0.0}}}.validate(m)));
}

} // namespace
