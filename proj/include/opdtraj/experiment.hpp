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

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "opdtraj/engines.hpp"
#include "opdtraj/frames.hpp"
#include "opdtraj/generator.hpp"

namespace opdtraj {

using Json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "0.1.0";

// Process exit codes of the CLI.
enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitConfig = 2,
  kExitMethodInapplicable = 3,
  kExitReverseJump = 4,
  kExitDecomposition = 5,
  kExitPositiveUnraveling = 6,
  kExitOracleCap = 7,
  kExitNumerical = 8,
  kExitCompareFailed = 9,
};

// Maps the currently handled exception onto an exit code.
int exit_code_for_current_exception();

std::uint64_t fnv1a64(const std::string& bytes);

// %.17g
std::string format_double(double x);

struct ResultRow {
  double t = 0.0;
  std::string observable;
  double mean = 0.0;
  double stderr_ = 0.0;
  std::string method;
  std::string branch;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  Json metadata;

  std::string csv() const;  // header t,observable,mean,stderr,method,branch
};

struct ObservableSpec {
  std::string name;
  Matrix op;
  bool hermitian = true;
};

struct CompareReport {
  ResultTable distances;  // observable "trace_distance"
  Json summary;
  bool pass = true;
};

// Parsed, validated experiment. Construction checks the whole config
// (unknown keys, types, ranges) and builds the model; nothing expensive runs
// until a command is called.
class Experiment {
 public:
  static Experiment from_json(const Json& config);
  static Experiment from_text(const std::string& text);
  static Experiment from_file(const std::string& path);

  void set_seed(std::uint64_t seed);
  void set_threads(int threads);

  const Json& config() const { return config_; }
  std::uint64_t config_hash() const;
  std::string config_hash_hex() const;
  const UnravelConfig& unravel() const { return unravel_; }
  const std::string& model_name() const;
  bool has_decomposition() const;
  const OPDecomposition& decomposition() const;
  const std::vector<ObservableSpec>& observables() const { return observables_; }

  Json decompose() const;
  ResultTable simulate() const;
  ResultTable exact() const;
  CompareReport compare() const;
  Json domain() const;

  struct Model;     // defined in experiment.cpp
  struct Prepared;  // schedules and the effective run configuration

 private:
  Json config_;
  UnravelConfig unravel_;
  bool cp_window_ = false;
  std::string oracle_ = "auto";
  bool branch_output_ = false;
  bool rate_output_ = false;
  double compare_threshold_ = 4.0;
  std::vector<ObservableSpec> observables_;
  std::vector<std::pair<std::string, CpMap>> repreparations_;
  std::shared_ptr<const Model> model_;

  Json base_metadata(const std::string& command) const;
  void add_rows(ResultTable& table, const Series& s, const std::string& branch,
                const std::string& method) const;
  void add_rows(ResultTable& table, double t, const Matrix& rho, const std::string& branch,
                const std::string& method) const;
  Prepared prepare() const;
  std::string oracle_kind() const;
  std::vector<std::pair<std::string, std::vector<Matrix>>> oracle_states(
      const std::vector<double>& times) const;
  std::vector<std::pair<std::string, Series>> simulated_states(const Prepared& prep,
                                                               Json& stats) const;
};

}  // namespace opdtraj
