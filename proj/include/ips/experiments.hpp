#pragma once

// Method dispatch for a single fit and the named experiment presets behind the
// scaling tables and method comparisons. Each preset writes rows of one CSV
// schema (see results_csv).

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ips/baselines.hpp"
#include "ips/basis.hpp"
#include "ips/eval.hpp"
#include "ips/selftest.hpp"
#include "ips/simulate.hpp"
#include "ips/train.hpp"

namespace ips {

enum class Method { SelftestLSE, LabeledMLE, SinkhornMLE, NN };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct BasisChoice {
  enum class Kind { Oracle, Rbf } kind = Kind::Oracle;
  std::size_t K = 20;       // RBFs per block
  double percentile = 99.0;  // r_max from the data
};

std::string to_string(BasisChoice::Kind k);
BasisChoice::Kind basis_kind_from_string(const std::string& s);

/// Oracle basis of `truth`, or RBFs with r_max from the data percentiles.
BasisSet make_basis(const BasisChoice& choice, const PotentialSpec& truth,
                    const SnapshotDataset& ds);

struct MethodConfig {
  Method method = Method::SelftestLSE;
  Quadrature quadrature = Quadrature::Riemann;
  BasisChoice basis;
  RegConfig reg;
  SinkhornConfig sinkhorn;
  TrainConfig train;
  int threads = 0;
};

/// Result of any method as far as the evaluation needs it.
struct AnyFit {
  Method method = Method::SelftestLSE;
  FitResult linear;   // parametric methods
  BasisSet basis;     // parametric methods
  NormalSystem system;  // parametric methods
  TrainResult nn;     // NN
  GradientEstimate estimate() const;
};

/// Fits `method` on ds. Labeled MLE needs labeled data; the others use the
/// data as given (strip first for the unlabeled protocol).
AnyFit fit_any(const SnapshotDataset& ds, const PotentialSpec& truth, const MethodConfig& cfg);

struct ResultRow {
  std::string model, method, quadrature, protocol;
  double dt = 0.0;
  std::size_t M = 0;
  std::string block;  // block index, or mean / std / slope for aggregate rows
  double err_V = 0.0, err_Phi = 0.0, lambda = 0.0, wall_s = 0.0;
};

inline constexpr int kResultsSchemaVersion = 1;

/// "# ips-results v1" followed by a header line and one line per row.
std::string results_csv(const std::vector<ResultRow>& rows);

/// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Appends per-block rows plus mean and std rows of one cell.
void append_cell(std::vector<ResultRow>& rows, const ResultRow& proto, const ErrorReport& r);

struct ConditionRow {
  std::string model;
  int N = 0, d = 0;
  double dt = 0.0;
  std::size_t M = 0;
  ConditionDiagnostics c;
};

std::string condition_csv(const std::vector<ConditionRow>& rows);

/// Desk-scale parameters of the presets; every field can be overridden from
/// the experiment config.
struct ExperimentConfig {
  std::string preset;
  std::uint64_t seed = 42;
  int threads = 0;
  double dt_fine = 1e-4;  // gap regime fine step
  std::vector<double> dt_list;
  std::vector<std::size_t> M_list;
  std::size_t trials = 5;
  std::vector<Quadrature> quadratures;
  std::vector<Method> methods;
  std::vector<Family> models;
  std::vector<int> N_list;
  // zero-gap panel of mscaling
  std::vector<double> zero_gap_dt_list;
  std::vector<std::size_t> zero_gap_M_list;
  std::size_t zero_gap_trials = 3;
  MethodConfig method;  // basis, regularization, Sinkhorn and training settings
};

/// Defaults of a named preset: mscaling, method-comparison, boundary,
/// cond-numbers, nonradial-nn.
ExperimentConfig preset_config(const std::string& name);

struct ExperimentOutput {
  std::vector<ResultRow> rows;
  std::vector<ConditionRow> conditions;  // cond-numbers
  std::string csv() const;
};

using Progress = std::function<void(const std::string&)>;

ExperimentOutput run_experiment(const ExperimentConfig& cfg, const Progress& log = {});

}  // namespace ips
