#pragma once

// Command-line orchestration: strict JSON run configs with flag overrides,
// run directories with manifests, and the simulate / strip / fit / evaluate /
// experiment commands.

#include <string>
#include <vector>

#include "ips/experiments.hpp"
#include "ips/serialize.hpp"

namespace ips {

Json to_json(const BasisSet& b);
BasisSet basis_from_json(const Json& j, const std::string& path);

Json to_json(const RegConfig& r);
RegConfig reg_config_from_json(const Json& j, const std::string& path, const RegConfig& base = {});

Json to_json(const SinkhornConfig& s);
SinkhornConfig sinkhorn_config_from_json(const Json& j, const std::string& path,
                                         const SinkhornConfig& base = {});

Json to_json(const TrainConfig& t);
TrainConfig train_config_from_json(const Json& j, const std::string& path,
                                   const TrainConfig& base = {});

Json to_json(const MethodConfig& m);
MethodConfig method_config_from_json(const Json& j, const std::string& path,
                                     const MethodConfig& base = {});

Json to_json(const ExperimentConfig& e);
/// Starts from preset_config(preset) and applies the remaining keys.
ExperimentConfig experiment_config_from_json(const Json& j, const std::string& path);

/// Audit report of a parametric fit: coefficients with basis labels, the
/// normal system in row-major form, the regularization outcome.
Json fit_report(const FitResult& f, const BasisSet& basis, const NormalSystem& ns);

/// Resolved configuration of one command. Unknown keys anywhere are errors.
struct RunConfig {
  std::string command;
  std::string out;  // run directory
  int threads = 0;
  SimConfig sim;                 // simulate
  std::string input;             // strip / fit / evaluate: dataset path
  std::uint64_t strip_seed = 7;  // strip
  MethodConfig fit;              // fit
  std::string fit_dir;           // evaluate: run directory of a fit
  std::size_t mc_points = 100'000;
  ExperimentConfig experiment;
};

RunConfig run_config_from_json(const Json& j, const std::string& command);
Json to_json(const RunConfig& c);

/// Executes one command; artifacts go under c.out. Files written by a failed
/// command are removed before the error propagates.
void run(const RunConfig& c);

/// Entry point of the `ips` executable. Returns the process exit status.
int cli_main(int argc, char** argv);

}  // namespace ips
