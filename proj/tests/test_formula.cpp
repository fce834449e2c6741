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

#include "support.hpp"

namespace {

using evreg::formula::Order;
using evreg::formula::parse_predictor;
using evreg::formula::PredictorExpr;

struct Columns {
    std::vector<std::vector<double>> data;
    std::vector<std::span<const double>> spans;
    explicit Columns(std::vector<std::vector<double>> d) : data(std::move(d)) {
        for (const auto& c : data)
            spans.emplace_back(c);
    }
};

evreg::formula::DerivBundle eval(const PredictorExpr& e, const std::vector<double>& theta, const Columns& cols,
                                 Order order = Order::hessian) {
    return e.evaluate(theta, cols.spans, static_cast<Eigen::Index>(cols.data.front().size()), order);
}

TEST(Formula, LinearPredictorValuesAndJacobian) {
    const auto e = parse_predictor("b1 + b2*x2 - 3*x3", {"b1", "b2"}, {"x2", "x3"});
    const Columns cols({{0.5, -1.0, 2.0}, {1.0, 0.0, -2.0}});
    const auto r = eval(e, {0.25, 2.0}, cols);
    EXPECT_DOUBLE_EQ(r.value[0], 0.25 + 1.0 - 3.0);
    EXPECT_DOUBLE_EQ(r.value[1], 0.25 - 2.0);
    EXPECT_DOUBLE_EQ(r.value[2], 0.25 + 4.0 + 6.0);
    EXPECT_DOUBLE_EQ(r.jac(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(r.jac(2, 1), 2.0);
    EXPECT_TRUE(e.is_linear());
    for (Eigen::Index t = 0; t < 3; ++t)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                EXPECT_EQ(r.hess(t, i, j), 0.0);
}

TEST(Formula, PowerWithParameterExponent) {
    const auto e = parse_predictor("b0 + b1*x1 + pow(x2, b2)", {"b0", "b1", "b2"}, {"x1", "x2"});
    EXPECT_FALSE(e.is_linear());
    const Columns cols({{0.2, 0.7}, {0.3, 0.9}});
    const double b2 = 0.4;
    const auto r = eval(e, {1.0, 2.0, b2}, cols);
    for (Eigen::Index t = 0; t < 2; ++t) {
        const double x2 = cols.data[1][static_cast<std::size_t>(t)];
        EXPECT_NEAR(r.jac(t, 2), std::log(x2) * std::pow(x2, b2), 1e-15);
        EXPECT_NEAR(r.hess(t, 2, 2), std::pow(std::log(x2), 2) * std::pow(x2, b2), 1e-15);
        EXPECT_EQ(r.hess(t, 0, 2), 0.0);
    }
}

// Jacobian and Hessian arrays against differences of the value, on a
// formula exercising every operator.
TEST(Formula, DerivativesMatchFiniteDifferences) {
    const auto e = parse_predictor("b0 + exp(b1 + b2*x) - log(1 + b3^2 * x^2) / (2 + b1*b1) + pow(x + 2, b2) - -b3/x",
                                   {"b0", "b1", "b2", "b3"}, {"x"});
    const Columns cols({{0.3, 1.2, 2.5, 0.8}});
    const std::vector<double> theta{0.5, -0.3, 0.7, 1.1};
    const auto r = eval(e, theta, cols);
    const Eigen::Map<const Eigen::VectorXd> th0(theta.data(), 4);
    for (Eigen::Index t = 0; t < 4; ++t) {
        auto value = [&](const Eigen::VectorXd& th) {
            std::vector<double> v(th.data(), th.data() + th.size());
            return eval(e, v, cols, Order::value).value[t];
        };
        auto grad = [&](const Eigen::VectorXd& th) {
            std::vector<double> v(th.data(), th.data() + th.size());
            return Eigen::VectorXd(eval(e, v, cols, Order::gradient).jac.row(t).transpose());
        };
        const Eigen::VectorXd g = evtest::fd_gradient(value, th0);
        const Eigen::MatrixXd h = evtest::fd_jacobian(grad, th0);
        for (Eigen::Index i = 0; i < 4; ++i) {
            EXPECT_NEAR(r.jac(t, i), g[i], 1e-9 * std::max(1.0, std::abs(g[i])));
            for (Eigen::Index j = 0; j < 4; ++j) {
                EXPECT_NEAR(r.hess(t, i, j), h(i, j), 1e-8 * std::max(1.0, std::abs(h(i, j))));
                EXPECT_EQ(r.hess(t, i, j), r.hess(t, j, i));
            }
        }
    }
}

TEST(Formula, PrintParseRoundTrip) {
    const std::vector<std::string> params{"a", "b", "c"};
    const std::vector<std::string> covs{"x", "y"};
    for (const char* text : {"a + b*x", "a - (b - c)", "-(a*x) + pow(y, c)", "exp(a + b*log(y))/(1 + x)",
                             "a*(-2.5) + x^2 - c/y/x", "a - -b", "pow(pow(x, 2), a)", "(a + b)*(c - x)",
                             "x^a^b", "-x^2", "1e-3*a + 2.5e10*b"}) {
        const auto e = parse_predictor(text, params, covs);
        const auto again = parse_predictor(e.to_string(), params, covs);
        EXPECT_TRUE(evreg::formula::structurally_equal(e, e.root(), again, again.root()))
            << text << " -> " << e.to_string();
        EXPECT_EQ(again.to_string(), e.to_string());
    }
}

TEST(Formula, CaretIsRightAssociativeAndBindsTighterThanNegation) {
    const auto e = parse_predictor("-x^2 + 2^a^2", {"a"}, {"x"});
    const Columns cols(std::vector<std::vector<double>>{{3.0}});
    const auto r = eval(e, {1.5}, cols, Order::value);
    EXPECT_NEAR(r.value[0], -9.0 + std::pow(2.0, std::pow(1.5, 2.0)), 1e-14);
}

TEST(Formula, CovariateUsage) {
    const auto e = parse_predictor("a + b*x1", {"a", "b"}, {"x1", "x2"});
    EXPECT_EQ(e.covariate_used(), (std::vector<bool>{true, false}));
}

void expect_parse_error(const std::string& text, std::size_t offset) {
    try {
        (void)parse_predictor(text, {"a", "b"}, {"x"});
        ADD_FAILURE() << "no error for '" << text << "'";
    } catch (const evreg::ParseError& e) {
        EXPECT_EQ(e.offset(), offset) << text << ": " << e.what();
    }
}

TEST(Formula, ParseErrorsCarryOffsets) {
    expect_parse_error("a + zz*x", 4);
    expect_parse_error("a + sin(x)", 4);
    expect_parse_error("a + ", 4);
    expect_parse_error("(a + b", 6);
    expect_parse_error("a b", 2);
    expect_parse_error("pow(x)", 0);
    expect_parse_error("exp(a, b)", 0);
    expect_parse_error("a + 2x", 5);
    expect_parse_error("", 0);
    expect_parse_error("a $ b", 2);
}

TEST(Formula, NameConflicts) {
    EXPECT_THROW((void)parse_predictor("a + x", {"a", "x"}, {"x"}), evreg::DataError);
    EXPECT_THROW((void)parse_predictor("a", {"a", "a"}, {}), evreg::DataError);
}

TEST(Formula, DomainErrorsNameTheObservation) {
    const Columns cols({{1.0, -1.0, 2.0}});
    auto observation = [&](const char* text, const std::vector<double>& theta) -> std::size_t {
        const auto e = parse_predictor(text, {"a"}, {"x"});
        try {
            (void)eval(e, theta, cols);
        } catch (const evreg::DomainError& err) {
            return err.observation();
        }
        return 0;
    };
    EXPECT_EQ(observation("a + log(x)", {1.0}), 2u);
    EXPECT_EQ(observation("pow(x, a)", {0.5}), 2u);
    EXPECT_EQ(observation("a / (x - 2)", {1.0}), 3u);
    EXPECT_EQ(observation("exp(a*x)", {800.0}), 1u);
    // integer constant exponent of a negative base is fine
    EXPECT_EQ(observation("a + x^3", {1.0}), 0u);
    EXPECT_EQ(observation("a + x^0.5", {1.0}), 2u);
}

TEST(Formula, MissingCovariateColumn) {
    const auto e = parse_predictor("a + x", {"a"}, {"x"});
    const std::vector<std::span<const double>> none(1);
    EXPECT_THROW((void)e.evaluate(std::vector<double>{1.0}, none, 3), evreg::DataError);
}

TEST(Formula, SharedSubexpressionsAreInterned) {
    const auto e = parse_predictor("exp(a*x) + exp(a*x)", {"a"}, {"x"});
    const auto& g = e.graph();
    const auto& root = g[e.root()];
    EXPECT_EQ(root.lhs, root.rhs);
}

} // namespace
