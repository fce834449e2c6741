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

// Command-line front end: fit, test, ci, simulate.

#include <CLI11.hpp>

#include <evreg/evreg.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace {

using evreg::io::json;

std::string fmt(double v, const char* spec = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

void write_json(const std::string& path, const json& j) {
    if (path.empty())
        return;
    if (path == "-") {
        std::cout << j.dump(2) << '\n';
        return;
    }
    std::ofstream out(path);
    if (!out)
        throw evreg::DataError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

struct Loaded {
    evreg::io::ModelConfig config;
    evreg::ModelSpec model;
    evreg::ObservationSet data;
    std::optional<evreg::Theta> init;
};

Loaded load(const std::string& model_path, const std::string& data_path) {
    Loaded l;
    l.config = evreg::io::load_model_config(model_path);
    l.data = evreg::io::load_dataset(data_path, l.config.response);
    l.model = l.config.build(l.data.covariate_names);
    l.init = l.config.init_theta(l.model);
    return l;
}

void print_flags(const std::vector<std::string>& flags) {
    if (flags.empty())
        return;
    std::cout << "flags:";
    for (const auto& f : flags)
        std::cout << ' ' << f;
    std::cout << '\n';
}

int run_fit(const std::string& model_path, const std::string& data_path, const std::string& json_path) {
    const Loaded l = load(model_path, data_path);
    evreg::FitOptions opts;
    opts.init = l.init;
    const evreg::FitResult fit = evreg::fit_mle(l.model, l.data, opts);
    const Eigen::VectorXd se = evreg::io::standard_errors(fit);
    std::printf("%-12s %-10s %14s %14s\n", "parameter", "block", "estimate", "se");
    for (std::size_t i = 0; i < fit.theta.names().size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        std::printf("%-12s %-10s %14s %14s\n", fit.theta.names()[i].c_str(), fit.theta.block_of(i),
                    fmt(fit.theta.flat()[ii], "%.8g").c_str(), fmt(se[ii], "%.6g").c_str());
    }
    std::printf("loglik %s  iterations %d  converged %s  score_norm %s\n", fmt(fit.loglik, "%.10g").c_str(),
                fit.iterations, fit.converged ? "yes" : "no", fmt(fit.score_norm, "%.3g").c_str());
    for (const auto& w : fit.warnings)
        std::cout << "warning: " << w << '\n';
    write_json(json_path, evreg::io::fit_to_json(fit));
    return fit.converged ? 0 : 3;
}

int run_test(const std::string& model_path, const std::string& data_path, const std::vector<std::string>& nulls,
             bool clamp, const std::string& json_path) {
    const Loaded l = load(model_path, data_path);
    const evreg::Hypothesis h = evreg::io::parse_hypothesis(nulls);
    evreg::TestOptions opts;
    opts.init = l.init;
    opts.skovgaard.clamp_at_zero = clamp;
    const evreg::TestReport rep = evreg::run_tests(l.model, l.data, h, opts);
    std::cout << "H0:";
    for (const auto& [name, v] : h.constraints)
        std::cout << ' ' << name << '=' << fmt(v, "%.10g");
    std::cout << "  (df " << rep.r << ")\n";
    std::printf("%-10s %12s %10s\n", "statistic", "value", "p-value");
    for (evreg::Statistic s : evreg::all_statistics)
        std::printf("%-10s %12s %10s\n", evreg::to_string(s), fmt(rep.statistic(s), "%.4f").c_str(),
                    fmt(rep.p_value(s), "%.4f").c_str());
    print_flags(rep.flags.names());
    write_json(json_path, evreg::io::report_to_json(rep));
    return rep.flags.fit_failed() ? 3 : 0;
}

int run_ci(const std::string& model_path, const std::string& data_path, std::vector<std::string> params,
           double level, std::vector<std::string> kinds, bool clamp, const std::string& json_path) {
    const Loaded l = load(model_path, data_path);
    if (params.empty())
        params = l.model.parameter_names();
    if (kinds.empty())
        for (evreg::Statistic s : evreg::all_statistics)
            kinds.emplace_back(evreg::to_string(s));
    evreg::IntervalOptions opts;
    opts.test.init = l.init;
    opts.test.skovgaard.clamp_at_zero = clamp;
    json out = json::array();
    std::printf("%-12s %-6s %14s %14s %14s\n", "parameter", "kind", "estimate", "lower", "upper");
    bool failures = false;
    for (const auto& p : params)
        for (const auto& k : kinds) {
            const auto ci = evreg::confidence_interval(l.model, l.data, p, level, evreg::parse_statistic(k), opts);
            std::printf("%-12s %-6s %14s %14s%s %14s%s\n", p.c_str(), evreg::to_string(ci.kind),
                        fmt(ci.estimate, "%.6g").c_str(), fmt(ci.lower, "%.6g").c_str(), ci.lower_open ? "*" : " ",
                        fmt(ci.upper, "%.6g").c_str(), ci.upper_open ? "*" : " ");
            if (ci.fit_failures) {
                std::cout << "flags: fit_failures\n";
                failures = true;
            }
            out.push_back(evreg::io::interval_to_json(ci));
        }
    if (out.size() > 0)
        std::cout << "level " << level << "; * marks an end left open at the search limit\n";
    write_json(json_path, out);
    return failures ? 3 : 0;
}

struct SimulateArgs {
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::optional<std::size_t> reps;
    std::vector<double> levels;
    bool clamp = false;
};

int run_simulate(const SimulateArgs& a) {
    evreg::io::SimulationPlan plan = evreg::io::load_simulation_config(a.config);
    auto& cfg = plan.config;
    if (a.seed)
        cfg.seed = *a.seed;
    if (a.threads)
        cfg.threads = *a.threads;
    if (a.reps)
        cfg.replications = *a.reps;
    if (!a.levels.empty())
        cfg.levels = a.levels;
    if (a.clamp)
        cfg.test.skovgaard.clamp_at_zero = true;
    cfg.validate();

    const std::filesystem::path dir(a.out);
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream f(dir / name);
        if (!f)
            throw evreg::DataError("cannot write '" + (dir / name).string() + "'");
        return f;
    };

    const int r = static_cast<int>(cfg.hypothesis.r());
    const evreg::SimulationRun run = evreg::simulate(cfg);
    const evreg::SizeTable table = evreg::size_table(run, cfg.levels, r);
    {
        auto f = open("size.csv");
        evreg::write_size_csv(f, table);
    }
    std::printf("%-8s", "level");
    for (evreg::Statistic s : evreg::all_statistics)
        std::printf(" %8s", evreg::to_string(s));
    std::printf("\n");
    for (double lv : cfg.levels) {
        std::printf("%-8s", fmt(lv, "%.3g").c_str());
        for (evreg::Statistic s : evreg::all_statistics)
            std::printf(" %8s", fmt(table.at(s, lv).rate, "%.2f").c_str());
        std::printf("\n");
    }
    std::printf("replications %zu, failed %zu, zeta_degenerate %zu\n", table.replications, table.failures,
                table.zeta_degenerate);

    json summary;
    summary["config"] = {{"model", evreg::io::model_config_to_json(plan.model_config)},
                         {"n", cfg.n},
                         {"replications", cfg.replications},
                         {"seed", cfg.seed},
                         {"design_seed", cfg.effective_design_seed()},
                         {"fixed_design", cfg.fixed_design},
                         {"levels", cfg.levels},
                         {"clamp_wstar", cfg.test.skovgaard.clamp_at_zero}};
    summary["size"] = evreg::io::size_table_to_json(table);

    if (!plan.discrepancy_grid.empty()) {
        const auto d = evreg::quantile_discrepancy(run, plan.discrepancy_grid, r);
        auto f = open("discrepancy.csv");
        evreg::write_discrepancy_csv(f, d);
        json sup = json::object();
        for (evreg::Statistic s : evreg::all_statistics)
            sup[evreg::to_string(s)] = d.sup_norm(s);
        summary["discrepancy_sup_norm"] = sup;
    }
    if (plan.power) {
        evreg::SimulationConfig null_cfg = cfg;
        null_cfg.seed = plan.power->critical_seed;
        null_cfg.replications = plan.power->critical_replications;
        const evreg::SimulationRun null_run = evreg::simulate(null_cfg);
        const evreg::CriticalValues cv = evreg::critical_values(null_run, cfg.levels);
        {
            auto f = open("critical.csv");
            evreg::write_critical_csv(f, cv);
        }
        const auto curve = evreg::power_study(cfg, plan.power->parameter, plan.power->epsilons, cv);
        auto f = open("power.csv");
        evreg::write_power_csv(f, curve);
        std::size_t failed = null_run.failures;
        for (const auto& pt : curve)
            failed += pt.failures;
        summary["power"] = {{"parameter", plan.power->parameter},
                            {"critical_replications", null_cfg.replications},
                            {"critical_seed", null_cfg.seed},
                            {"failures", failed}};
    }
    auto f = open("summary.json");
    f << summary.dump(2) << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Extreme-value regression: fitting, likelihood-based tests and simulation"};
    app.require_subcommand(1);

    std::string model_path, data_path, json_path;
    std::vector<std::string> nulls, params, kinds;
    double level = 0.95;
    bool clamp = false;
    SimulateArgs sim;

    auto* fit = app.add_subcommand("fit", "Maximum-likelihood fit");
    fit->add_option("--model", model_path, "Model config (JSON)")->required()->check(CLI::ExistingFile);
    fit->add_option("--data", data_path, "Dataset (CSV)")->required()->check(CLI::ExistingFile);
    fit->add_option("--json", json_path, "Write the result as JSON ('-' for stdout)");

    auto* test = app.add_subcommand("test", "Five tests of a null hypothesis");
    test->add_option("--model", model_path, "Model config (JSON)")->required()->check(CLI::ExistingFile);
    test->add_option("--data", data_path, "Dataset (CSV)")->required()->check(CLI::ExistingFile);
    test->add_option("--null", nulls, "name=value; repeat for a joint hypothesis")->required();
    test->add_flag("--clamp-wstar", clamp, "Clamp negative w* at zero");
    test->add_option("--json", json_path, "Write the report as JSON ('-' for stdout)");

    auto* ci = app.add_subcommand("ci", "Confidence intervals by test inversion");
    ci->add_option("--model", model_path, "Model config (JSON)")->required()->check(CLI::ExistingFile);
    ci->add_option("--data", data_path, "Dataset (CSV)")->required()->check(CLI::ExistingFile);
    ci->add_option("--param", params, "Parameter name; repeatable (default: all)");
    ci->add_option("--level", level, "Confidence level")->check(CLI::Range(0.5, 1.0));
    ci->add_option("--kind", kinds, "w, W, S_R, S_T or wstar; repeatable (default: all)");
    ci->add_flag("--clamp-wstar", clamp, "Clamp negative w* at zero");
    ci->add_option("--json", json_path, "Write the intervals as JSON ('-' for stdout)");

    auto* simulate = app.add_subcommand("simulate", "Monte Carlo study from a simulation config");
    simulate->add_option("--config", sim.config, "Simulation config (JSON)")->required()->check(CLI::ExistingFile);
    simulate->add_option("--out", sim.out, "Output directory");
    simulate->add_option("--seed", sim.seed, "Override the seed");
    simulate->add_option("--threads", sim.threads, "Worker threads (0: all cores)");
    simulate->add_option("--reps", sim.reps, "Override the number of replications");
    simulate->add_option("--levels", sim.levels, "Nominal levels")->delimiter(',');
    simulate->add_flag("--clamp-wstar", sim.clamp, "Clamp negative w* at zero");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*fit)
            return run_fit(model_path, data_path, json_path);
        if (*test)
            return run_test(model_path, data_path, nulls, clamp, json_path);
        if (*ci)
            return run_ci(model_path, data_path, params, level, kinds, clamp, json_path);
        if (*simulate)
            return run_simulate(sim);
    } catch (const evreg::UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const evreg::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 3;
    } catch (const evreg::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
