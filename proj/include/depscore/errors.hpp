// Copyright 2026 The depscore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace depscore {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or indices that do not line up.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced where a finite value was required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration (split ratio, budget, flags).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// CSV ingestion failures. The message names the row and column.
class IngestError : public Error {
 public:
  using Error::Error;
};

/// Transport or remote failure of an external conditional predictor.
class PredictorUnavailable : public Error {
 public:
  using Error::Error;
};

/// Operation requested from a component that does not support it.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Metric asked for on input where it is not defined (single class, constant vector).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

/// A generator specification that cannot be satisfied.
class SpecError : public Error {
 public:
  using Error::Error;
};

}  // namespace depscore
