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

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace evreg {

/// A response column plus named covariate columns, all of length n.
struct ObservationSet {
    std::string response_name = "y";
    Eigen::VectorXd response;
    std::vector<std::string> covariate_names;
    std::vector<Eigen::VectorXd> covariates;

    Eigen::Index rows() const { return response.size(); }

    bool has_covariate(std::string_view name) const {
        return std::find(covariate_names.begin(), covariate_names.end(), name) != covariate_names.end();
    }

    const Eigen::VectorXd& covariate(std::string_view name) const {
        const auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
        if (it == covariate_names.end()) {
            std::string known;
            for (const auto& c : covariate_names)
                known += (known.empty() ? "" : ", ") + c;
            throw DataError("unknown column '" + std::string(name) + "' (available: " + known + ")");
        }
        return covariates[static_cast<std::size_t>(it - covariate_names.begin())];
    }

    void add_covariate(std::string name, Eigen::VectorXd column) {
        if (has_covariate(name) || name == response_name)
            throw DataError("duplicate column name '" + name + "'");
        covariate_names.push_back(std::move(name));
        covariates.push_back(std::move(column));
    }

    /// Spans aligned with `names`; names that are absent map to empty spans.
    std::vector<std::span<const double>> columns_for(const std::vector<std::string>& names) const {
        std::vector<std::span<const double>> out;
        out.reserve(names.size());
        for (const auto& name : names) {
            const auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
            if (it == covariate_names.end()) {
                out.emplace_back();
            } else {
                const auto& c = covariates[static_cast<std::size_t>(it - covariate_names.begin())];
                out.emplace_back(c.data(), static_cast<std::size_t>(c.size()));
            }
        }
        return out;
    }

    /// Throws DataError unless all columns have equal length and finite values.
    void validate() const {
        const auto check = [&](const Eigen::VectorXd& c, const std::string& name) {
            if (c.size() != rows())
                throw DataError("column '" + name + "' has " + std::to_string(c.size()) +
                                " rows, expected " + std::to_string(rows()));
            for (Eigen::Index t = 0; t < c.size(); ++t)
                if (!std::isfinite(c[t]))
                    throw DataError("column '" + name + "' has a non-finite value in row " +
                                    std::to_string(t + 1));
        };
        check(response, response_name);
        for (std::size_t i = 0; i < covariates.size(); ++i)
            check(covariates[i], covariate_names[i]);
    }
};

} // namespace evreg
