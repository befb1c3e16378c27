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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "opdtraj/experiment.hpp"

namespace fs = std::filesystem;
using opdtraj::Experiment;
using opdtraj::Json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

// CSV to DIR/<cmd>.csv plus metadata to DIR/<cmd>.json, or CSV on stdout.
void emit_table(const Options& o, const std::string& cmd, const opdtraj::ResultTable& t) {
  if (o.out.empty()) {
    std::cout << t.csv();
    return;
  }
  fs::create_directories(o.out);
  write_file(fs::path(o.out) / (cmd + ".csv"), t.csv());
  write_file(fs::path(o.out) / (cmd + ".json"), t.metadata.dump(2) + "\n");
}

void emit_json(const Options& o, const std::string& cmd, const Json& j) {
  if (o.out.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  fs::create_directories(o.out);
  write_file(fs::path(o.out) / (cmd + ".json"), j.dump(2) + "\n");
}

Experiment load(const Options& o) {
  Experiment ex = Experiment::from_file(o.config);
  if (o.seed) ex.set_seed(*o.seed);
  if (o.threads) ex.set_threads(*o.threads);
  return ex;
}

int run(const std::string& cmd, const Options& o) {
  const Experiment ex = load(o);
  if (cmd == "decompose") {
    emit_json(o, cmd, ex.decompose());
  } else if (cmd == "simulate") {
    const auto t = ex.simulate();
    for (const auto& w : t.metadata["warnings"]) std::cerr << "warning: " << w.get<std::string>() << "\n";
    emit_table(o, cmd, t);
  } else if (cmd == "exact") {
    emit_table(o, cmd, ex.exact());
  } else if (cmd == "compare") {
    const auto rep = ex.compare();
    emit_table(o, cmd, rep.distances);
    std::cerr << "compare: " << (rep.pass ? "pass" : "FAIL") << " (oracle " << rep.summary["oracle"].get<std::string>() << ")\n";
    if (!rep.pass) {
      std::cerr << "compare: trajectory average deviates from the oracle\n";
      return opdtraj::kExitCompareFailed;
    }
  } else if (cmd == "domain") {
    emit_json(o, cmd, ex.domain());
  }
  return opdtraj::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory unravelings of initially correlated open quantum systems"};
  app.set_version_flag("--version", std::string(opdtraj::kVersion));
  app.require_subcommand(1);

  Options opts;
  const std::pair<const char*, const char*> commands[] = {
      {"decompose", "Decompose the initial global state over the system frame"},
      {"simulate", "Unravel every branch and write the averaged time series"},
      {"exact", "Evaluate the reference oracle on the output grid"},
      {"compare", "Trace distance between trajectory average and oracle"},
      {"domain", "Compatible-state domain scan"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", opts.seed, "Override the master seed");
    sub->add_option("--out", opts.out, "Output directory (default: stdout)");
    sub->add_option("--threads", opts.threads, "Worker threads; results do not depend on it")
        ->check(CLI::NonNegativeNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : opdtraj::kExitConfig;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return run(cmd, opts);
  } catch (const std::exception& e) {
    const int rc = opdtraj::exit_code_for_current_exception();
    std::cerr << "opdtraj " << cmd << ": " << e.what() << "\n";
    return rc;
  }
}
