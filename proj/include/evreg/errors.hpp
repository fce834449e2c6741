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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace evreg {

// Base of every error thrown by the library. The CLI maps the subclasses
// onto exit codes (usage 1, data/model 2, numerical 3).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

// Bad input data or an inconsistent model specification.
class DataError : public Error {
public:
    using Error::Error;
};

class ParseError : public DataError {
public:
    ParseError(const std::string& message, std::size_t offset)
        : DataError(message + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

// A function evaluated outside its domain. `observation` is 1-based, 0 when
// the failure is not tied to a particular observation.
class DomainError : public Error {
public:
    explicit DomainError(const std::string& message, std::size_t observation = 0)
        : Error(observation == 0
                    ? message
                    : message + " (observation " + std::to_string(observation) + ")"),
          observation_(observation) {}

    std::size_t observation() const noexcept { return observation_; }

private:
    std::size_t observation_;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace evreg
