// Copyright 2026 The opdtraj Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace opdtraj {

// Every failure mode the CLI distinguishes has its own type; the CLI maps
// them onto exit codes (see tools/opdtraj_main.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NotHermitianError : public Error {
 public:
  using Error::Error;
};

class InvalidStateError : public Error {
 public:
  using Error::Error;
};

class SingularFrameError : public Error {
 public:
  SingularFrameError(const std::string& what, int rank, int required)
      : Error(what), rank_(rank), required_(required) {}
  int rank() const { return rank_; }
  int required() const { return required_; }

 private:
  int rank_;
  int required_;
};

class DecompositionError : public Error {
 public:
  DecompositionError(const std::string& what, int alpha) : Error(what), alpha_(alpha) {}
  int alpha() const { return alpha_; }

 private:
  int alpha_;
};

class MethodInapplicableError : public Error {
 public:
  using Error::Error;
};

class ReverseJumpError : public Error {
 public:
  using Error::Error;
};

class PositiveUnravelingError : public Error {
 public:
  PositiveUnravelingError(const std::string& what, double lambda_min)
      : Error(what), lambda_min_(lambda_min) {}
  double lambda_min() const { return lambda_min_; }

 private:
  double lambda_min_;
};

class OracleCapError : public Error {
 public:
  using Error::Error;
};

// Step-size underflow, quadrature non-convergence, ill-conditioned inversion.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace opdtraj
