#include "ips/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace ips {

std::string to_string(Method m) {
  switch (m) {
    case Method::SelftestLSE: return "selftest-lse";
    case Method::LabeledMLE: return "labeled-mle";
    case Method::SinkhornMLE: return "sinkhorn-mle";
    case Method::NN: return "nn";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "selftest-lse") return Method::SelftestLSE;
  if (s == "labeled-mle") return Method::LabeledMLE;
  if (s == "sinkhorn-mle") return Method::SinkhornMLE;
  if (s == "nn") return Method::NN;
  throw Error("unknown method '" + s + "' (expected selftest-lse, labeled-mle, sinkhorn-mle or nn)");
}

std::string to_string(BasisChoice::Kind k) { return k == BasisChoice::Kind::Oracle ? "oracle" : "rbf"; }

BasisChoice::Kind basis_kind_from_string(const std::string& s) {
  if (s == "oracle") return BasisChoice::Kind::Oracle;
  if (s == "rbf") return BasisChoice::Kind::Rbf;
  throw Error("unknown basis '" + s + "' (expected oracle or rbf)");
}

BasisSet make_basis(const BasisChoice& c, const PotentialSpec& truth, const SnapshotDataset& ds) {
  if (c.kind == BasisChoice::Kind::Oracle) return oracle_basis(truth).basis;
  const PercentileRadii r = percentile_rmax(ds, c.percentile);
  return rbf_basis(c.K, r.r_max_V, r.r_max_Phi, static_cast<int>(ds.header.d));
}

GradientEstimate AnyFit::estimate() const {
  if (method == Method::NN) return estimate_from_nets(nn.V, nn.Phi);
  return estimate_from_basis(basis, linear.theta);
}

AnyFit fit_any(const SnapshotDataset& ds, const PotentialSpec& truth, const MethodConfig& cfg) {
  AnyFit f;
  f.method = cfg.method;
  if (cfg.method == Method::NN) {
    TrainConfig t = cfg.train;
    if (t.threads == 0) t.threads = cfg.threads;
    f.nn = train(ds, t);
    return f;
  }
  f.basis = make_basis(cfg.basis, truth, ds);
  switch (cfg.method) {
    case Method::SelftestLSE:
      f.linear = fit_selftest(ds, f.basis, cfg.quadrature, cfg.reg, cfg.threads, &f.system);
      break;
    case Method::LabeledMLE:
      f.linear = labeled_mle(ds, f.basis, cfg.reg, cfg.threads, &f.system);
      break;
    case Method::SinkhornMLE:
      f.linear = sinkhorn_mle(ds, f.basis, cfg.sinkhorn, cfg.reg, cfg.threads, &f.system);
      break;
    case Method::NN: break;
  }
  return f;
}

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  os << "# ips-results v" << kResultsSchemaVersion << '\n'
     << "model,method,quadrature,protocol,dt,M,block,err_gradV,err_gradPhi,lambda,wall_time_s\n";
  os << std::setprecision(10);
  for (const auto& r : rows)
    os << r.model << ',' << r.method << ',' << r.quadrature << ',' << r.protocol << ',' << r.dt << ','
       << r.M << ',' << r.block << ',' << r.err_V << ',' << r.err_Phi << ',' << r.lambda << ','
       << r.wall_s << '\n';
  return os.str();
}

std::string condition_csv(const std::vector<ConditionRow>& rows) {
  std::ostringstream os;
  os << "# ips-conditions v" << kResultsSchemaVersion << '\n'
     << "model,N,d,dt,M,kappa_full,kappa_VV,kappa_PhiPhi,lambda_min,lambda_max\n";
  os << std::setprecision(10);
  for (const auto& r : rows)
    os << r.model << ',' << r.N << ',' << r.d << ',' << r.dt << ',' << r.M << ',' << r.c.kappa_full
       << ',' << r.c.kappa_VV << ',' << r.c.kappa_PhiPhi << ',' << r.c.lambda_min << ','
       << r.c.lambda_max << '\n';
  return os.str();
}

std::string ExperimentOutput::csv() const {
  return conditions.empty() ? results_csv(rows) : condition_csv(conditions);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("loglog_slope: need two or more points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw Error("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= x.size();
  my /= y.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = std::log(x[i]) - mx;
    sxy += a * (std::log(y[i]) - my);
    sxx += a * a;
  }
  if (!(sxx > 0.0)) throw Error("loglog_slope: x values must differ");
  return sxy / sxx;
}

void append_cell(std::vector<ResultRow>& rows, const ResultRow& proto, const ErrorReport& r) {
  for (std::size_t k = 0; k < r.err_V.size(); ++k) {
    ResultRow row = proto;
    row.block = std::to_string(k);
    row.err_V = r.err_V[k];
    row.err_Phi = r.err_Phi[k];
    row.lambda = r.lambda[k];
    row.wall_s = r.wall_s[k];
    rows.push_back(row);
  }
  double lam = 0.0, wall = 0.0;
  for (std::size_t k = 0; k < r.lambda.size(); ++k) {
    lam += r.lambda[k] / r.lambda.size();
    wall += r.wall_s[k] / r.wall_s.size();
  }
  ResultRow mean = proto, sd = proto;
  mean.block = "mean";
  mean.err_V = r.mean_V;
  mean.err_Phi = r.mean_Phi;
  mean.lambda = lam;
  mean.wall_s = wall;
  sd.block = "std";
  sd.err_V = r.std_V;
  sd.err_Phi = r.std_Phi;
  sd.lambda = 0.0;
  sd.wall_s = 0.0;
  rows.push_back(mean);
  rows.push_back(sd);
}

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  c.method.basis.kind = BasisChoice::Kind::Oracle;
  if (name == "mscaling") {
    c.dt_list = {1e-2, 1e-1};
    c.M_list = {50, 200, 1000};
    c.trials = 5;
    c.quadratures = {Quadrature::Riemann, Quadrature::Trapezoid};
    c.methods = {Method::SelftestLSE};
    c.models = {Family::Reference};
    c.zero_gap_dt_list = {1e-2};
    c.zero_gap_M_list = {200, 2000};
  } else if (name == "method-comparison") {
    c.dt_list = {1e-2, 1e-1};
    c.M_list = {2000};
    c.trials = 2;
    c.quadratures = {Quadrature::Riemann};
    c.methods = {Method::LabeledMLE, Method::SelftestLSE, Method::SinkhornMLE};
    c.models = {Family::Reference};
  } else if (name == "boundary") {
    c.dt_list = {1e-2, 1e-1};
    c.M_list = {500};
    c.trials = 2;
    c.quadratures = {Quadrature::Riemann};
    c.methods = {Method::LabeledMLE, Method::SelftestLSE, Method::SinkhornMLE};
    c.models = {Family::Smoothness, Family::Conditioning, Family::Singularity, Family::SmoothControl};
  } else if (name == "cond-numbers") {
    c.dt_fine = 1e-3;
    c.dt_list = {1e-2};
    c.M_list = {2000};
    c.trials = 1;
    c.quadratures = {Quadrature::Riemann};
    c.models = {Family::Reference};
    c.N_list = {5, 10, 20};
  } else if (name == "nonradial-nn") {
    c.dt_list = {1e-3};
    c.M_list = {500};
    c.trials = 1;
    c.quadratures = {Quadrature::Riemann};
    c.methods = {Method::NN};
    c.models = {Family::Anisotropic};
    c.method.method = Method::NN;
    TrainConfig& t = c.method.train;
    t.radial = false;
    t.estimator = LossEstimator::Telescoped;
    t.lr_V = 1e-3;
    t.lr_Phi = 1e-3;
    t.epochs_max = 20;
    t.pairs_per_epoch = 12800;
    t.batch_size = 32;
    t.eval_every = 1;
    t.patience = 10;
    t.val_pairs_max = 2048;
  } else {
    throw Error("unknown experiment preset '" + name +
                "' (expected mscaling, method-comparison, boundary, cond-numbers or nonradial-nn)");
  }
  return c;
}

namespace {

using Clock = std::chrono::steady_clock;

void say(const Progress& log, const std::string& s) {
  if (log) log(s);
}

// Labeled pool of `M` ensembles recorded every `dt_obs`.
SnapshotDataset pool(const ExperimentConfig& cfg, Family fam, int N, Protocol proto, double dt_fine,
                     double dt_obs, std::size_t M) {
  SimConfig s;
  s.N = N;
  s.spec = PotentialSpec::make(fam, 2);
  s.d = 2;
  s.M = static_cast<int>(M);
  s.protocol = proto;
  s.dt_fine = dt_fine;
  s.dt_obs = dt_obs;
  s.seed = cfg.seed;
  s.threads = cfg.threads;
  return simulate(s);
}

std::size_t stride_of(double coarse, double fine) {
  const double s = coarse / fine;
  const auto k = static_cast<std::size_t>(std::llround(s));
  if (k < 1 || std::abs(s - static_cast<double>(k)) > 1e-9 * s)
    throw Error("experiment.dt_list: " + std::to_string(coarse) + " is not a multiple of " +
                std::to_string(fine));
  return k;
}

// All methods and quadratures on one labeled pool at one observation step.
void run_cells(const ExperimentConfig& cfg, const SnapshotDataset& labeled, const PotentialSpec& truth,
               const std::vector<Method>& methods, const std::vector<Quadrature>& quads,
               const std::vector<std::size_t>& M_list, std::size_t trials, std::vector<ResultRow>& rows,
               const Progress& log) {
  const SnapshotDataset unlabeled = strip_labels(labeled, cfg.seed ^ 0x5EEDull);
  const EvalContext ctx = make_eval_context(labeled, truth);
  const auto& h = labeled.header;
  for (Method m : methods) {
    const bool uses_quad = m == Method::SelftestLSE;
    const std::vector<Quadrature> qs = uses_quad ? quads : std::vector<Quadrature>{Quadrature::Riemann};
    for (Quadrature q : qs) {
      for (std::size_t M : M_list) {
        MethodConfig mc = cfg.method;
        mc.method = m;
        mc.quadrature = q;
        mc.threads = cfg.threads;
        const SnapshotDataset& data = m == Method::LabeledMLE ? labeled : unlabeled;
        const ErrorReport r = block_evaluation(data, M, trials, [&](const SnapshotDataset& block) {
          const AnyFit f = fit_any(block, truth, mc);
          return BlockFit{gradient_errors(f.estimate(), ctx), f.linear.lambda};
        });
        ResultRow proto;
        proto.model = to_string(truth.family());
        proto.method = to_string(m);
        proto.quadrature = m == Method::NN ? "none" : to_string(q);
        proto.protocol = to_string(h.config.protocol);
        proto.dt = h.dt;
        proto.M = M;
        append_cell(rows, proto, r);
        std::ostringstream os;
        os << proto.model << ' ' << proto.method << ' ' << proto.quadrature << ' ' << proto.protocol
           << " dt=" << h.dt << " M=" << M << ": err_gradV " << r.mean_V << " +- " << r.std_V
           << ", err_gradPhi " << r.mean_Phi << " +- " << r.std_Phi;
        say(log, os.str());
      }
    }
  }
}

// Slope rows over M for every (method, quadrature, protocol, dt) with 2+ M values.
void append_slopes(std::vector<ResultRow>& rows) {
  std::vector<ResultRow> out;
  std::vector<bool> used(rows.size(), false);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].block != "mean" || used[i]) continue;
    std::vector<double> M, eV, eP;
    for (std::size_t j = i; j < rows.size(); ++j) {
      const auto& a = rows[i];
      const auto& b = rows[j];
      if (b.block == "mean" && a.model == b.model && a.method == b.method &&
          a.quadrature == b.quadrature && a.protocol == b.protocol && a.dt == b.dt) {
        used[j] = true;
        M.push_back(static_cast<double>(b.M));
        eV.push_back(b.err_V);
        eP.push_back(b.err_Phi);
      }
    }
    if (M.size() < 2) continue;
    ResultRow s = rows[i];
    s.M = 0;
    s.block = "slope";
    s.err_V = loglog_slope(M, eV);
    s.err_Phi = loglog_slope(M, eP);
    s.lambda = 0.0;
    s.wall_s = 0.0;
    out.push_back(s);
  }
  rows.insert(rows.end(), out.begin(), out.end());
}

std::size_t max_of(const std::vector<std::size_t>& v) {
  if (v.empty()) throw Error("experiment.M_list: must not be empty");
  return *std::max_element(v.begin(), v.end());
}

}  // namespace

ExperimentOutput run_experiment(const ExperimentConfig& cfg, const Progress& log) {
  if (cfg.dt_list.empty()) throw Error("experiment.dt_list: must not be empty");
  if (cfg.trials < 1) throw Error("experiment.trials: must be >= 1");
  ExperimentOutput out;
  const std::string& p = cfg.preset;

  if (p == "cond-numbers") {
    for (Family fam : cfg.models)
      for (int N : cfg.N_list)
        for (double dt : cfg.dt_list) {
          const std::size_t M = max_of(cfg.M_list);
          const SnapshotDataset ds =
              pool(cfg, fam, N, Protocol::Gap, std::min(cfg.dt_fine, dt), dt, M);
          const PotentialSpec truth = PotentialSpec::make(fam, 2);
          const BasisSet basis = make_basis(cfg.method.basis, truth, ds);
          const Quadrature q = cfg.quadratures.empty() ? Quadrature::Riemann : cfg.quadratures[0];
          const NormalSystem ns = assemble(ds, basis, q, cfg.threads);
          ConditionRow r{to_string(fam), N, 2, dt, M, condition_diagnostics(ns.A, ns.K_V)};
          std::ostringstream os;
          os << "N=" << N << ": kappa " << r.c.kappa_full << ", kappa_VV " << r.c.kappa_VV
             << ", kappa_PhiPhi " << r.c.kappa_PhiPhi;
          say(log, os.str());
          out.conditions.push_back(r);
        }
    return out;
  }

  const bool zero_gap_main = p == "nonradial-nn";
  for (Family fam : cfg.models) {
    const PotentialSpec truth = PotentialSpec::make(fam, 2);
    const std::size_t M_pool = max_of(cfg.M_list) * cfg.trials;
    if (zero_gap_main) {
      for (double dt : cfg.dt_list) {
        say(log, "simulating " + to_string(fam) + " zero-gap pool of " + std::to_string(M_pool));
        const SnapshotDataset ds = pool(cfg, fam, 10, Protocol::ZeroGap, dt, dt, M_pool);
        run_cells(cfg, ds, truth, cfg.methods, cfg.quadratures, cfg.M_list, cfg.trials, out.rows, log);
      }
      continue;
    }
    const double dt_min = *std::min_element(cfg.dt_list.begin(), cfg.dt_list.end());
    say(log, "simulating " + to_string(fam) + " gap pool of " + std::to_string(M_pool) + " ensembles");
    const SnapshotDataset base = pool(cfg, fam, 10, Protocol::Gap, cfg.dt_fine, dt_min, M_pool);
    for (double dt : cfg.dt_list) {
      const SnapshotDataset ds = stride_snapshots(base, stride_of(dt, dt_min));
      run_cells(cfg, ds, truth, cfg.methods, cfg.quadratures, cfg.M_list, cfg.trials, out.rows, log);
    }
    for (double dt : cfg.zero_gap_dt_list) {
      const std::size_t Mz = max_of(cfg.zero_gap_M_list) * cfg.zero_gap_trials;
      say(log, "simulating zero-gap pool dt=" + std::to_string(dt));
      const SnapshotDataset ds = pool(cfg, fam, 10, Protocol::ZeroGap, dt, dt, Mz);
      run_cells(cfg, ds, truth, {Method::SelftestLSE}, {Quadrature::Riemann}, cfg.zero_gap_M_list,
                cfg.zero_gap_trials, out.rows, log);
    }
  }
  append_slopes(out.rows);
  return out;
}

}  // namespace ips
