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

// Monte Carlo studies of the five tests: null rejection rates, exact
// critical values, power curves and relative quantile discrepancies.
// Replication i always uses outcome stream i, so results do not depend on
// the number of worker threads.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "data.hpp"
#include "inference.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "specfun.hpp"

namespace evreg {

struct CovariateLaw {
    enum class Kind { uniform, fixed };
    Kind kind = Kind::uniform;
    double lower = -0.5;
    double upper = 0.5;
    ObservationSet fixed; // Kind::fixed: covariate columns with n rows
};

struct SimulationConfig {
    ModelSpec model;
    Theta theta;
    Hypothesis hypothesis;
    Eigen::Index n = 0;
    std::size_t replications = 10000;
    CovariateLaw covariates;
    bool fixed_design = true;                // draw covariates once, not per replication
    std::uint64_t seed = 1;                  // outcome streams
    std::optional<std::uint64_t> design_seed; // defaults to seed
    std::vector<double> levels{0.10, 0.05, 0.01};
    unsigned threads = 0;                     // 0: hardware concurrency
    double max_failure_fraction = 0.05;
    TestOptions test;

    std::uint64_t effective_design_seed() const { return design_seed.value_or(seed); }

    void validate() const {
        model.validate();
        hypothesis.validate(model);
        if (theta.flat().size() != static_cast<Eigen::Index>(model.p()))
            throw DataError("true parameter vector has the wrong length");
        if (replications < 1)
            throw DataError("replications must be at least 1");
        if (n <= static_cast<Eigen::Index>(model.p()))
            throw DataError("sample size must exceed the number of parameters");
        for (double a : levels)
            if (!(a > 0.0 && a < 1.0))
                throw DataError("nominal levels must lie in (0, 1)");
        if (covariates.kind == CovariateLaw::Kind::uniform && !(covariates.lower < covariates.upper))
            throw DataError("covariate law needs lower < upper");
    }
};

/// Covariate names referenced by either predictor, location ones first.
inline std::vector<std::string> model_covariates(const ModelSpec& model) {
    std::vector<std::string> out;
    for (const auto* expr : {&model.location, &model.dispersion})
        for (std::size_t j = 0; j < expr->covariates().size(); ++j) {
            const auto& c = expr->covariates()[j];
            if (expr->covariate_used()[j] && std::find(out.begin(), out.end(), c) == out.end())
                out.push_back(c);
        }
    return out;
}

inline constexpr std::uint64_t design_stream_base = std::uint64_t{1} << 62;

/// Covariates for one replication (replication index ignored for fixed
/// designs). The response column is zero-filled.
inline ObservationSet draw_design(const SimulationConfig& cfg, std::size_t replication = 0) {
    ObservationSet d;
    d.response = Eigen::VectorXd::Zero(cfg.n);
    const auto names = model_covariates(cfg.model);
    if (cfg.covariates.kind == CovariateLaw::Kind::fixed) {
        for (const auto& name : names) {
            const Eigen::VectorXd& col = cfg.covariates.fixed.covariate(name);
            if (col.size() != cfg.n)
                throw DataError("fixed covariate '" + name + "' does not have n rows");
            d.add_covariate(name, col);
        }
        return d;
    }
    const std::uint64_t stream = design_stream_base + (cfg.fixed_design ? 0 : replication);
    RngStream rng(cfg.effective_design_seed(), stream);
    std::vector<Eigen::VectorXd> cols(names.size(), Eigen::VectorXd(cfg.n));
    for (Eigen::Index t = 0; t < cfg.n; ++t)
        for (auto& c : cols)
            c[t] = rng.uniform(cfg.covariates.lower, cfg.covariates.upper);
    for (std::size_t j = 0; j < names.size(); ++j)
        d.add_covariate(names[j], std::move(cols[j]));
    return d;
}

/// Runs body(i) for i in [0, count) on up to `threads` workers. The first
/// exception thrown is rethrown after all workers finish.
template <class Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
    if (threads == 0)
        threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(count, 1)));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count)
                return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error)
                    error = std::current_exception();
                next = count;
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (unsigned w = 0; w < threads; ++w)
            pool.emplace_back(worker);
    }
    if (error)
        std::rethrow_exception(error);
}

struct ReplicationOutcome {
    bool ok = false;
    std::array<double, 5> statistics{}; // in all_statistics order
    TestFlags flags;
    std::string error;
};

/// One replication: sample the response, fit both models, compute the five
/// statistics. Never throws for data-dependent failures; they land in
/// `error` with ok = false.
inline ReplicationOutcome replicate(const SimulationConfig& cfg, const ObservationSet& design,
                                    std::size_t replication) {
    ReplicationOutcome out;
    try {
        ObservationSet data = design;
        RngStream rng(cfg.seed, replication);
        data.response = sample_response(cfg.model, cfg.theta, data, rng);
        const TestReport rep = run_tests(cfg.model, data, cfg.hypothesis, cfg.test);
        out.flags = rep.flags;
        for (Statistic s : all_statistics)
            out.statistics[static_cast<std::size_t>(s)] = rep.statistic(s);
        out.ok = !rep.flags.fit_failed();
        if (!out.ok)
            out.error = "fit did not converge";
    } catch (const Error& e) {
        out.error = e.what();
    }
    return out;
}

struct SimulationRun {
    std::vector<ReplicationOutcome> outcomes; // by replication index
    std::size_t failures = 0;
    std::size_t zeta_degenerate = 0;
    ObservationSet design; // the fixed design (first replication's when redrawn)

    std::size_t used() const { return outcomes.size() - failures; }

    /// Values of one statistic over the successful replications, in index order.
    std::vector<double> values(Statistic s) const {
        std::vector<double> v;
        v.reserve(used());
        for (const auto& o : outcomes)
            if (o.ok)
                v.push_back(o.statistics[static_cast<std::size_t>(s)]);
        return v;
    }
};

inline SimulationRun simulate(const SimulationConfig& cfg) {
    cfg.validate();
    SimulationRun run;
    run.design = draw_design(cfg, 0);
    run.outcomes.resize(cfg.replications);
    parallel_for(cfg.replications, cfg.threads, [&](std::size_t i) {
        if (cfg.fixed_design || cfg.covariates.kind == CovariateLaw::Kind::fixed)
            run.outcomes[i] = replicate(cfg, run.design, i);
        else
            run.outcomes[i] = replicate(cfg, draw_design(cfg, i), i);
    });
    std::string first_error;
    for (const auto& o : run.outcomes) {
        if (!o.ok) {
            ++run.failures;
            if (first_error.empty())
                first_error = o.error;
        } else if (o.flags.skovgaard.zeta_degenerate) {
            ++run.zeta_degenerate;
        }
    }
    if (static_cast<double>(run.failures) > cfg.max_failure_fraction * static_cast<double>(cfg.replications))
        throw NumericalError(std::to_string(run.failures) + " of " + std::to_string(cfg.replications) +
                             " replications failed (first: " + first_error + ")");
    return run;
}

/// Type-7 sample quantile (linear interpolation between order statistics).
inline double quantile_type7(std::vector<double> values, double prob) {
    if (values.empty())
        throw std::invalid_argument("quantile of an empty sample");
    if (!(prob >= 0.0 && prob <= 1.0))
        throw std::invalid_argument("quantile probability must lie in [0, 1]");
    std::sort(values.begin(), values.end());
    const double h = static_cast<double>(values.size() - 1) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

struct RateCell {
    Statistic statistic = Statistic::w;
    double level = 0.05;
    double rate = 0.0; // percent
    double se = 0.0;   // percent
};

struct SizeTable {
    std::vector<RateCell> cells; // statistic-major, levels in config order
    std::size_t replications = 0;
    std::size_t used = 0;
    std::size_t failures = 0;
    std::size_t zeta_degenerate = 0;

    const RateCell& at(Statistic s, double level) const {
        for (const auto& c : cells)
            if (c.statistic == s && std::abs(c.level - level) < 1e-12)
                return c;
        throw std::out_of_range("no such cell in the size table");
    }
};

namespace detail {

inline RateCell rate_cell(const std::vector<double>& values, double threshold, Statistic s, double level) {
    std::size_t hits = 0;
    for (double v : values)
        if (v > threshold)
            ++hits;
    RateCell c;
    c.statistic = s;
    c.level = level;
    const double R = static_cast<double>(values.size());
    const double p = R > 0 ? static_cast<double>(hits) / R : 0.0;
    c.rate = 100.0 * p;
    c.se = R > 0 ? 100.0 * std::sqrt(p * (1.0 - p) / R) : 0.0;
    return c;
}

} // namespace detail

/// Rejection rates against chi-square critical values.
inline SizeTable size_table(const SimulationRun& run, const std::vector<double>& levels, int r) {
    SizeTable t;
    t.replications = run.outcomes.size();
    t.used = run.used();
    t.failures = run.failures;
    t.zeta_degenerate = run.zeta_degenerate;
    for (Statistic s : all_statistics) {
        const auto v = run.values(s);
        for (double a : levels)
            t.cells.push_back(detail::rate_cell(v, specfun::chi2_quantile(1.0 - a, r), s, a));
    }
    return t;
}

inline SizeTable size_study(const SimulationConfig& cfg) {
    return size_table(simulate(cfg), cfg.levels, static_cast<int>(cfg.hypothesis.r()));
}

struct CriticalValues {
    std::vector<double> levels;
    std::array<std::vector<double>, 5> values; // [statistic][level]: the 1 - level quantile

    double at(Statistic s, double level) const {
        for (std::size_t j = 0; j < levels.size(); ++j)
            if (std::abs(levels[j] - level) < 1e-12)
                return values[static_cast<std::size_t>(s)][j];
        throw std::out_of_range("no critical value at that level");
    }
};

inline CriticalValues critical_values(const SimulationRun& run, const std::vector<double>& levels) {
    CriticalValues cv;
    cv.levels = levels;
    for (Statistic s : all_statistics) {
        const auto v = run.values(s);
        for (double a : levels)
            cv.values[static_cast<std::size_t>(s)].push_back(quantile_type7(v, 1.0 - a));
    }
    return cv;
}

inline CriticalValues critical_values(const SimulationConfig& cfg, const std::vector<double>& levels) {
    return critical_values(simulate(cfg), levels);
}

struct PowerPoint {
    double epsilon = 0.0;
    std::vector<RateCell> cells; // statistic-major, levels of the critical values
    std::size_t failures = 0;
};

/// Rejection frequencies with the supplied critical values when the true
/// value of `parameter` is each epsilon; all other true values come from
/// cfg.theta.
inline std::vector<PowerPoint> power_study(const SimulationConfig& cfg, const std::string& parameter,
                                           const std::vector<double>& epsilons, const CriticalValues& critical) {
    const std::size_t index = cfg.theta.require(parameter);
    std::vector<PowerPoint> out;
    for (double eps : epsilons) {
        SimulationConfig c = cfg;
        c.theta.flat()[static_cast<Eigen::Index>(index)] = eps;
        const SimulationRun run = simulate(c);
        PowerPoint pt;
        pt.epsilon = eps;
        pt.failures = run.failures;
        for (Statistic s : all_statistics) {
            const auto v = run.values(s);
            for (std::size_t j = 0; j < critical.levels.size(); ++j)
                pt.cells.push_back(detail::rate_cell(v, critical.values[static_cast<std::size_t>(s)][j], s,
                                                     critical.levels[j]));
        }
        out.push_back(std::move(pt));
    }
    return out;
}

struct DiscrepancyCurve {
    std::vector<double> grid;
    std::array<std::vector<double>, 5> values; // [statistic][grid point]

    double sup_norm(Statistic s) const {
        double m = 0.0;
        for (double v : values[static_cast<std::size_t>(s)])
            m = std::max(m, std::abs(v));
        return m;
    }
};

/// (empirical quantile at level F(q) - q) / q for each asymptotic quantile
/// q of the chi-square(r) law.
inline DiscrepancyCurve quantile_discrepancy(const SimulationRun& run, const std::vector<double>& grid, int r) {
    DiscrepancyCurve d;
    d.grid = grid;
    for (Statistic s : all_statistics) {
        std::vector<double> v = run.values(s);
        std::sort(v.begin(), v.end());
        for (double q : grid)
            d.values[static_cast<std::size_t>(s)].push_back((quantile_type7(v, specfun::chi2_cdf(q, r)) - q) / q);
    }
    return d;
}

inline DiscrepancyCurve quantile_discrepancy(const SimulationConfig& cfg, const std::vector<double>& grid) {
    return quantile_discrepancy(simulate(cfg), grid, static_cast<int>(cfg.hypothesis.r()));
}

inline void write_size_csv(std::ostream& os, const SizeTable& t) {
    os << "statistic,level,rate_percent,se_percent,used,failures\n";
    os.precision(17);
    for (const auto& c : t.cells)
        os << to_string(c.statistic) << ',' << c.level << ',' << c.rate << ',' << c.se << ',' << t.used << ','
           << t.failures << '\n';
}

inline void write_critical_csv(std::ostream& os, const CriticalValues& cv) {
    os << "statistic,level,critical_value\n";
    os.precision(17);
    for (Statistic s : all_statistics)
        for (std::size_t j = 0; j < cv.levels.size(); ++j)
            os << to_string(s) << ',' << cv.levels[j] << ',' << cv.values[static_cast<std::size_t>(s)][j] << '\n';
}

inline void write_power_csv(std::ostream& os, const std::vector<PowerPoint>& curve) {
    os << "epsilon,statistic,level,power_percent,se_percent,failures\n";
    os.precision(17);
    for (const auto& pt : curve)
        for (const auto& c : pt.cells)
            os << pt.epsilon << ',' << to_string(c.statistic) << ',' << c.level << ',' << c.rate << ',' << c.se
               << ',' << pt.failures << '\n';
}

inline void write_discrepancy_csv(std::ostream& os, const DiscrepancyCurve& d) {
    os << "statistic,quantile,relative_discrepancy\n";
    os.precision(17);
    for (Statistic s : all_statistics)
        for (std::size_t j = 0; j < d.grid.size(); ++j)
            os << to_string(s) << ',' << d.grid[j] << ',' << d.values[static_cast<std::size_t>(s)][j] << '\n';
}

} // namespace evreg
