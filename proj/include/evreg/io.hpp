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

// Dataset ingestion (CSV), model and simulation configuration (JSON) and
// report serialization.

#pragma once

#include <json.hpp>

#include <Eigen/Core>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "inference.hpp"
#include "model.hpp"
#include "montecarlo.hpp"

namespace evreg::io {

using json = nlohmann::ordered_json;

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
        s = s.substr(1, s.size() - 2);
    return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos)
            return out;
        start = comma + 1;
    }
}

inline std::optional<double> parse_number(std::string_view cell) {
    if (!cell.empty() && cell.front() == '+')
        cell.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty() || !std::isfinite(v))
        return std::nullopt;
    return v;
}

} // namespace detail

/// Reads a header-first CSV ('.' decimals). `response` names the response
/// column; every other column becomes a covariate. Rows are numbered from 1
/// after the header in error messages.
inline ObservationSet read_csv(std::istream& in, const std::string& response, const std::string& source = "input") {
    std::string line;
    if (!std::getline(in, line) || detail::trim(line).empty())
        throw DataError(source + ": file is empty");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
        line.erase(0, 3);
    std::vector<std::string> header;
    for (auto name : detail::split(line)) {
        if (name.empty())
            throw DataError(source + ": empty column name in header");
        for (const auto& h : header)
            if (h == name)
                throw DataError(source + ": duplicate column '" + std::string(name) + "'");
        header.emplace_back(name);
    }
    std::vector<std::vector<double>> cols(header.size());
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty())
            continue;
        ++row;
        const auto cells = detail::split(line);
        if (cells.size() != header.size())
            throw DataError(source + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                            " fields, expected " + std::to_string(header.size()));
        for (std::size_t j = 0; j < cells.size(); ++j) {
            const auto v = detail::parse_number(cells[j]);
            if (!v)
                throw DataError(source + ": row " + std::to_string(row) + ", column '" + header[j] +
                                "': not a finite number ('" + std::string(cells[j]) + "')");
            cols[j].push_back(*v);
        }
    }
    if (row == 0)
        throw DataError(source + ": no data rows");

    ObservationSet data;
    data.response_name = response;
    bool found = false;
    for (std::size_t j = 0; j < header.size(); ++j) {
        Eigen::VectorXd col = Eigen::Map<const Eigen::VectorXd>(cols[j].data(), static_cast<Eigen::Index>(cols[j].size()));
        if (header[j] == response) {
            data.response = std::move(col);
            found = true;
        } else {
            data.covariate_names.push_back(header[j]);
            data.covariates.push_back(std::move(col));
        }
    }
    if (!found) {
        std::string known;
        for (const auto& h : header)
            known += (known.empty() ? "" : ", ") + h;
        throw DataError(source + ": missing response column '" + response + "' (available: " + known + ")");
    }
    data.validate();
    return data;
}

inline ObservationSet load_dataset(const std::filesystem::path& path, const std::string& response) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open '" + path.string() + "'");
    return read_csv(in, response, path.string());
}

inline json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

inline Link parse_link(const std::string& s) {
    if (s == "identity")
        return Link::identity;
    if (s == "log")
        return Link::log;
    throw DataError("unknown link '" + s + "' (expected identity or log)");
}

inline Family parse_family(const std::string& s) {
    if (s == "max")
        return Family::ev_max;
    if (s == "min")
        return Family::ev_min;
    throw DataError("unknown family '" + s + "' (expected max or min)");
}

/// Model configuration as written in JSON; see docs/schemas.md.
struct ModelConfig {
    Family family = Family::ev_max;
    std::string location;
    std::vector<std::string> location_params;
    Link location_link = Link::identity;
    std::string dispersion;
    std::vector<std::string> dispersion_params;
    Link dispersion_link = Link::log;
    std::string response = "y";
    std::optional<std::vector<std::string>> covariates;
    std::vector<std::pair<std::string, double>> init;

    /// Covariate names default to `available` (the dataset's columns).
    ModelSpec build(const std::vector<std::string>& available = {}) const {
        return make_model(family, location, location_params, location_link, dispersion, dispersion_params,
                          dispersion_link, covariates.value_or(available));
    }

    std::optional<Theta> init_theta(const ModelSpec& model) const {
        if (init.empty())
            return std::nullopt;
        Theta t(model);
        for (const auto& [name, v] : init)
            t[name] = v;
        return t;
    }
};

namespace detail {

template <class T>
T get(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key))
        throw DataError(where + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw DataError(where + ": key '" + key + "': " + e.what());
    }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
    return j.contains(key) ? get<T>(j, key, where) : fallback;
}

inline std::vector<std::pair<std::string, double>> named_values(const json& j, const std::string& where) {
    if (!j.is_object())
        throw DataError(where + ": expected an object of name: value pairs");
    std::vector<std::pair<std::string, double>> out;
    for (const auto& [k, v] : j.items()) {
        if (!v.is_number())
            throw DataError(where + ": value of '" + k + "' is not a number");
        out.emplace_back(k, v.get<double>());
    }
    return out;
}

} // namespace detail

inline ModelConfig parse_model_config(const json& j) {
    const std::string where = "model config";
    if (!j.is_object())
        throw DataError(where + ": expected a JSON object");
    ModelConfig c;
    c.family = parse_family(detail::get_or<std::string>(j, "family", "max", where));
    const json loc = detail::get<json>(j, "location", where);
    const json disp = detail::get<json>(j, "dispersion", where);
    c.location = detail::get<std::string>(loc, "formula", where + ".location");
    c.location_params = detail::get<std::vector<std::string>>(loc, "parameters", where + ".location");
    c.location_link = parse_link(detail::get_or<std::string>(loc, "link", "identity", where + ".location"));
    c.dispersion = detail::get<std::string>(disp, "formula", where + ".dispersion");
    c.dispersion_params = detail::get<std::vector<std::string>>(disp, "parameters", where + ".dispersion");
    c.dispersion_link = parse_link(detail::get_or<std::string>(disp, "link", "log", where + ".dispersion"));
    c.response = detail::get_or<std::string>(j, "response", "y", where);
    if (j.contains("covariates"))
        c.covariates = detail::get<std::vector<std::string>>(j, "covariates", where);
    if (j.contains("init"))
        c.init = detail::named_values(j.at("init"), where + ".init");
    return c;
}

inline json model_config_to_json(const ModelConfig& c) {
    json j;
    j["family"] = to_string(c.family);
    j["location"] = {{"formula", c.location}, {"parameters", c.location_params}, {"link", to_string(c.location_link)}};
    j["dispersion"] = {
        {"formula", c.dispersion}, {"parameters", c.dispersion_params}, {"link", to_string(c.dispersion_link)}};
    j["response"] = c.response;
    if (c.covariates)
        j["covariates"] = *c.covariates;
    if (!c.init.empty()) {
        json init = json::object();
        for (const auto& [k, v] : c.init)
            init[k] = v;
        j["init"] = init;
    }
    return j;
}

inline ModelConfig load_model_config(const std::filesystem::path& path) {
    return parse_model_config(read_json_file(path));
}

/// "name=value" pairs, one per element, as a joint hypothesis.
inline Hypothesis parse_hypothesis(const std::vector<std::string>& pairs) {
    Hypothesis h;
    for (const auto& text : pairs) {
        // a single argument may also carry several comma-separated pairs
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) {
            const auto eq = item.find('=');
            if (eq == std::string::npos)
                throw UsageError("hypothesis '" + item + "' is not of the form name=value");
            const std::string name(detail::trim(std::string_view(item).substr(0, eq)));
            const auto value = detail::parse_number(detail::trim(std::string_view(item).substr(eq + 1)));
            if (name.empty() || !value)
                throw UsageError("hypothesis '" + item + "' is not of the form name=value");
            h.constraints.emplace_back(name, *value);
        }
    }
    return h;
}

/// Everything a `simulate` run needs besides the command line.
struct SimulationPlan {
    ModelConfig model_config;
    SimulationConfig config;
    std::vector<double> discrepancy_grid;
    struct Power {
        std::string parameter;
        std::vector<double> epsilons;
        std::size_t critical_replications = 100000;
        std::uint64_t critical_seed = 0;
    };
    std::optional<Power> power;
};

/// Parses a simulation config; relative file references resolve against
/// `base_dir`.
inline SimulationPlan parse_simulation_config(const json& j, const std::filesystem::path& base_dir = {}) {
    const std::string where = "simulation config";
    if (!j.is_object())
        throw DataError(where + ": expected a JSON object");
    SimulationPlan plan;
    if (j.contains("model_file"))
        plan.model_config = load_model_config(base_dir / detail::get<std::string>(j, "model_file", where));
    else
        plan.model_config = parse_model_config(detail::get<json>(j, "model", where));
    if (!plan.model_config.covariates)
        throw DataError(where + ": the model must list its covariates");

    SimulationConfig& cfg = plan.config;
    cfg.model = plan.model_config.build();
    cfg.theta = Theta(cfg.model);
    const auto truth = detail::named_values(detail::get<json>(j, "theta", where), where + ".theta");
    if (truth.size() != cfg.model.p())
        throw DataError(where + ".theta: expected a value for each of the " + std::to_string(cfg.model.p()) +
                        " parameters");
    for (const auto& [name, v] : truth)
        cfg.theta[name] = v;
    cfg.hypothesis.constraints = detail::named_values(detail::get<json>(j, "hypothesis", where), where + ".hypothesis");
    cfg.n = detail::get<Eigen::Index>(j, "n", where);
    cfg.replications = detail::get_or<std::size_t>(j, "replications", cfg.replications, where);
    cfg.fixed_design = detail::get_or<bool>(j, "fixed_design", cfg.fixed_design, where);
    cfg.seed = detail::get_or<std::uint64_t>(j, "seed", cfg.seed, where);
    if (j.contains("design_seed"))
        cfg.design_seed = detail::get<std::uint64_t>(j, "design_seed", where);
    cfg.levels = detail::get_or<std::vector<double>>(j, "levels", cfg.levels, where);
    cfg.test.skovgaard.clamp_at_zero = detail::get_or<bool>(j, "clamp_wstar", false, where);
    cfg.threads = detail::get_or<unsigned>(j, "threads", 0u, where);

    if (j.contains("covariates")) {
        const json& law = j.at("covariates");
        const auto kind = detail::get_or<std::string>(law, "law", "uniform", where + ".covariates");
        if (kind == "uniform") {
            cfg.covariates.kind = CovariateLaw::Kind::uniform;
            cfg.covariates.lower = detail::get_or<double>(law, "lower", -0.5, where + ".covariates");
            cfg.covariates.upper = detail::get_or<double>(law, "upper", 0.5, where + ".covariates");
        } else if (kind == "fixed") {
            cfg.covariates.kind = CovariateLaw::Kind::fixed;
            const auto file = detail::get<std::string>(law, "file", where + ".covariates");
            std::ifstream in(base_dir / file);
            if (!in)
                throw DataError("cannot open '" + (base_dir / file).string() + "'");
            // the design file has no response; read it with a dummy one
            std::stringstream buf;
            std::string header;
            std::getline(in, header);
            buf << "__unused__," << header << '\n';
            std::string line;
            while (std::getline(in, line))
                if (!detail::trim(line).empty())
                    buf << "0," << line << '\n';
            cfg.covariates.fixed = read_csv(buf, "__unused__", file);
        } else {
            throw DataError(where + ".covariates: unknown law '" + kind + "' (expected uniform or fixed)");
        }
    }
    if (j.contains("discrepancy_grid"))
        plan.discrepancy_grid = detail::get<std::vector<double>>(j, "discrepancy_grid", where);
    if (j.contains("power")) {
        const json& pj = j.at("power");
        SimulationPlan::Power p;
        p.parameter = detail::get<std::string>(pj, "parameter", where + ".power");
        p.epsilons = detail::get<std::vector<double>>(pj, "epsilons", where + ".power");
        p.critical_replications =
            detail::get_or<std::size_t>(pj, "critical_replications", p.critical_replications, where + ".power");
        p.critical_seed = detail::get_or<std::uint64_t>(pj, "critical_seed", cfg.seed + 1, where + ".power");
        plan.power = std::move(p);
    }
    cfg.validate();
    return plan;
}

inline SimulationPlan load_simulation_config(const std::filesystem::path& path) {
    return parse_simulation_config(read_json_file(path), path.parent_path());
}

namespace detail {

inline json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double number_from(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

} // namespace detail

inline json report_to_json(const TestReport& rep) {
    json j;
    json h = json::array();
    for (const auto& [name, v] : rep.hypothesis.constraints)
        h.push_back({{"parameter", name}, {"value", v}});
    j["hypothesis"] = h;
    j["df"] = rep.r;
    json stats = json::object();
    json pvals = json::object();
    for (Statistic s : all_statistics) {
        stats[to_string(s)] = detail::number(rep.statistic(s));
        pvals[to_string(s)] = detail::number(rep.p_value(s));
    }
    j["statistics"] = stats;
    j["p_values"] = pvals;
    j["zeta"] = detail::number(rep.zeta);
    j["flags"] = rep.flags.names();
    return j;
}

inline TestReport report_from_json(const json& j) {
    TestReport rep;
    try {
        for (const auto& c : j.at("hypothesis"))
            rep.hypothesis.constraints.emplace_back(c.at("parameter").get<std::string>(), c.at("value").get<double>());
        rep.r = j.at("df").get<int>();
        const json& stats = j.at("statistics");
        rep.w = detail::number_from(stats.at("w"));
        rep.W = detail::number_from(stats.at("W"));
        rep.S_R = detail::number_from(stats.at("S_R"));
        rep.S_T = detail::number_from(stats.at("S_T"));
        rep.w_star = detail::number_from(stats.at("wstar"));
        for (Statistic s : all_statistics)
            rep.p_values[static_cast<std::size_t>(s)] = detail::number_from(j.at("p_values").at(to_string(s)));
        rep.zeta = detail::number_from(j.at("zeta"));
        for (const auto& f : j.at("flags")) {
            const auto name = f.get<std::string>();
            if (name == "near_zero_w") rep.flags.skovgaard.near_zero_w = true;
            else if (name == "zeta_degenerate") rep.flags.skovgaard.zeta_degenerate = true;
            else if (name == "ill_conditioned") rep.flags.skovgaard.ill_conditioned = true;
            else if (name == "wstar_clamped") rep.flags.skovgaard.clamped = true;
            else if (name == "unrestricted_fit_not_converged") rep.flags.unrestricted_not_converged = true;
            else if (name == "restricted_fit_not_converged") rep.flags.restricted_not_converged = true;
            else if (name == "negative_S_T") rep.flags.negative_gradient_statistic = true;
            else throw DataError("report: unknown flag '" + name + "'");
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("report: ") + e.what());
    }
    return rep;
}

/// Standard errors from the inverse expected information.
inline Eigen::VectorXd standard_errors(const FitResult& fit) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(fit.I.full);
    const Eigen::MatrixXd inv = lu.inverse();
    Eigen::VectorXd se(inv.rows());
    for (Eigen::Index i = 0; i < se.size(); ++i)
        se[i] = inv(i, i) > 0.0 ? std::sqrt(inv(i, i)) : std::numeric_limits<double>::quiet_NaN();
    return se;
}

inline json fit_to_json(const FitResult& fit) {
    json j;
    const Eigen::VectorXd se = standard_errors(fit);
    json params = json::array();
    for (std::size_t i = 0; i < fit.theta.names().size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        params.push_back({{"name", fit.theta.names()[i]},
                          {"block", fit.theta.block_of(i)},
                          {"estimate", detail::number(fit.theta.flat()[ii])},
                          {"se", detail::number(se[ii])}});
    }
    j["parameters"] = params;
    j["loglik"] = detail::number(fit.loglik);
    j["score_norm"] = detail::number(fit.score_norm);
    j["converged"] = fit.converged;
    j["iterations"] = fit.iterations;
    j["warnings"] = fit.warnings;
    return j;
}

inline json interval_to_json(const ConfidenceInterval& ci) {
    return {{"parameter", ci.parameter},   {"level", ci.level},
            {"kind", to_string(ci.kind)},  {"estimate", detail::number(ci.estimate)},
            {"lower", detail::number(ci.lower)}, {"upper", detail::number(ci.upper)},
            {"lower_open", ci.lower_open}, {"upper_open", ci.upper_open},
            {"fit_failures", ci.fit_failures}, {"evaluations", ci.evaluations}};
}

inline json size_table_to_json(const SizeTable& t) {
    json cells = json::array();
    for (const auto& c : t.cells)
        cells.push_back({{"statistic", to_string(c.statistic)}, {"level", c.level}, {"rate_percent", c.rate},
                         {"se_percent", c.se}});
    return {{"replications", t.replications}, {"used", t.used}, {"failures", t.failures},
            {"zeta_degenerate", t.zeta_degenerate}, {"cells", cells}};
}

} // namespace evreg::io
