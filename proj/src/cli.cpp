#include "ips/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

namespace ips {
namespace fs = std::filesystem;

namespace {

const char* kind_name(TermKind k) {
  switch (k) {
    case TermKind::Power: return "power";
    case TermKind::Gaussian: return "gaussian";
    case TermKind::SmoothedIndicator: return "smoothed_indicator";
    case TermKind::Saturating: return "saturating";
    case TermKind::ClampedInversePower: return "clamped_inverse_power";
    case TermKind::Exponential: return "exponential";
  }
  return "?";
}

TermKind kind_from_name(const std::string& s, const std::string& path) {
  for (TermKind k : {TermKind::Power, TermKind::Gaussian, TermKind::SmoothedIndicator,
                     TermKind::Saturating, TermKind::ClampedInversePower, TermKind::Exponential})
    if (s == kind_name(k)) return k;
  throw Error(path + ": unknown basis term kind '" + s + "'");
}

Json terms_json(const std::vector<RadialTerm>& ts) {
  Json a = Json::array();
  for (const auto& t : ts)
    a.push_back({{"kind", kind_name(t.kind)}, {"p1", t.p1}, {"p2", t.p2}, {"p3", t.p3}, {"label", t.label}});
  return a;
}

std::vector<RadialTerm> terms_from_json(const Json& j, const std::string& path) {
  if (!j.is_array()) throw Error(path + ": expected an array");
  std::vector<RadialTerm> out;
  for (std::size_t k = 0; k < j.size(); ++k) {
    const std::string p = path + "[" + std::to_string(k) + "]";
    Fields f(j[k], p);
    RadialTerm t;
    std::string kind;
    if (!f.get("kind", kind)) throw Error(p + ".kind: missing");
    t.kind = kind_from_name(kind, p + ".kind");
    f.get("p1", t.p1);
    f.get("p2", t.p2);
    f.get("p3", t.p3);
    f.get("label", t.label);
    f.done();
    out.push_back(t);
  }
  return out;
}

// Applies `fn` to a string-valued key holding an enum name, prefixing errors with the field.
template <class T, class F>
bool get_enum(Fields& f, const char* key, T& out, F&& parse) {
  std::string s;
  if (!f.get(key, s)) return false;
  try {
    out = parse(s);
  } catch (const Error& e) {
    throw Error(f.field(key) + ": " + e.what());
  }
  return true;
}

template <class T, class F>
bool get_enum_list(Fields& f, const char* key, std::vector<T>& out, F&& parse) {
  std::vector<std::string> s;
  if (!f.get(key, s)) return false;
  out.clear();
  for (const auto& x : s) {
    try {
      out.push_back(parse(x));
    } catch (const Error& e) {
      throw Error(f.field(key) + ": " + e.what());
    }
  }
  return true;
}

}  // namespace

Json to_json(const BasisSet& b) {
  return Json{{"dim", b.dim}, {"V", terms_json(b.v)}, {"Phi", terms_json(b.phi)}};
}

BasisSet basis_from_json(const Json& j, const std::string& path) {
  Fields f(j, path);
  BasisSet b;
  f.get("dim", b.dim);
  auto it = j.find("V");
  if (it == j.end()) throw Error(path + ".V: missing");
  f.mark("V");
  b.v = terms_from_json(*it, path + ".V");
  it = j.find("Phi");
  if (it == j.end()) throw Error(path + ".Phi: missing");
  f.mark("Phi");
  b.phi = terms_from_json(*it, path + ".Phi");
  f.done();
  validate(b);
  return b;
}

Json to_json(const RegConfig& r) {
  return Json{{"policy", to_string(r.policy)},
              {"lambda", r.lambda},
              {"grid", r.grid},
              {"fallback_lambda", r.fallback_lambda},
              {"flat_threshold", r.flat_threshold}};
}

RegConfig reg_config_from_json(const Json& j, const std::string& path, const RegConfig& base) {
  Fields f(j, path);
  RegConfig r = base;
  get_enum(f, "policy", r.policy, reg_policy_from_string);
  f.get("lambda", r.lambda);
  f.get("grid", r.grid);
  f.get("fallback_lambda", r.fallback_lambda);
  f.get("flat_threshold", r.flat_threshold);
  f.done();
  if (r.policy == RegPolicy::Fixed && !(r.lambda > 0.0)) throw Error(f.field("lambda") + ": must be > 0");
  for (double l : r.grid)
    if (!(l > 0.0)) throw Error(f.field("grid") + ": values must be > 0");
  if (!(r.fallback_lambda > 0.0)) throw Error(f.field("fallback_lambda") + ": must be > 0");
  return r;
}

Json to_json(const SinkhornConfig& s) {
  return Json{{"eps_factor", s.eps_factor},
              {"eps_floor", s.eps_floor},
              {"max_iters", s.max_iters},
              {"tol", s.tol}};
}

SinkhornConfig sinkhorn_config_from_json(const Json& j, const std::string& path,
                                         const SinkhornConfig& base) {
  Fields f(j, path);
  SinkhornConfig s = base;
  f.get("eps_factor", s.eps_factor);
  f.get("eps_floor", s.eps_floor);
  f.get("max_iters", s.max_iters);
  f.get("tol", s.tol);
  f.done();
  if (!(s.eps_factor > 0.0)) throw Error(f.field("eps_factor") + ": must be > 0");
  if (!(s.eps_floor > 0.0)) throw Error(f.field("eps_floor") + ": must be > 0");
  if (s.max_iters < 1) throw Error(f.field("max_iters") + ": must be >= 1");
  if (!(s.tol > 0.0)) throw Error(f.field("tol") + ": must be > 0");
  return s;
}

Json to_json(const TrainConfig& t) {
  return Json{{"lr_V", t.lr_V},
              {"lr_Phi", t.lr_Phi},
              {"epochs_max", t.epochs_max},
              {"eta_min_ratio", t.eta_min_ratio},
              {"clip_norm", t.clip_norm},
              {"batch_size", t.batch_size},
              {"eval_every", t.eval_every},
              {"patience", t.patience},
              {"seed", t.seed},
              {"val_fraction", t.val_fraction},
              {"val_pairs_max", t.val_pairs_max},
              {"pairs_per_epoch", t.pairs_per_epoch},
              {"activation", to_string(t.activation)},
              {"hidden", t.hidden},
              {"estimator", to_string(t.estimator)},
              {"radial", t.radial},
              {"divergence_threshold", t.divergence_threshold}};
}

TrainConfig train_config_from_json(const Json& j, const std::string& path, const TrainConfig& base) {
  Fields f(j, path);
  TrainConfig t = base;
  f.get("lr_V", t.lr_V);
  f.get("lr_Phi", t.lr_Phi);
  f.get("epochs_max", t.epochs_max);
  f.get("eta_min_ratio", t.eta_min_ratio);
  f.get("clip_norm", t.clip_norm);
  f.get("batch_size", t.batch_size);
  f.get("eval_every", t.eval_every);
  f.get("patience", t.patience);
  f.get("seed", t.seed);
  f.get("val_fraction", t.val_fraction);
  f.get("val_pairs_max", t.val_pairs_max);
  f.get("pairs_per_epoch", t.pairs_per_epoch);
  get_enum(f, "activation", t.activation, activation_from_string);
  f.get("hidden", t.hidden);
  get_enum(f, "estimator", t.estimator, loss_estimator_from_string);
  f.get("radial", t.radial);
  f.get("divergence_threshold", t.divergence_threshold);
  f.get("threads", t.threads);
  f.done();
  try {
    validate(t);
  } catch (const Error& e) {
    // "train.<field>: ..." -> "<path>.<field>: ..."
    std::string m = e.what();
    if (m.rfind("train.", 0) == 0) m = m.substr(6);
    throw Error(path + "." + m);
  }
  for (int w : t.hidden)
    if (w < 1) throw Error(f.field("hidden") + ": widths must be >= 1");
  return t;
}

Json to_json(const MethodConfig& m) {
  return Json{{"method", to_string(m.method)},
              {"quadrature", to_string(m.quadrature)},
              {"basis", {{"kind", to_string(m.basis.kind)}, {"K", m.basis.K}, {"percentile", m.basis.percentile}}},
              {"reg", to_json(m.reg)},
              {"sinkhorn", to_json(m.sinkhorn)},
              {"train", to_json(m.train)}};
}

MethodConfig method_config_from_json(const Json& j, const std::string& path, const MethodConfig& base) {
  Fields f(j, path);
  MethodConfig m = base;
  get_enum(f, "method", m.method, method_from_string);
  get_enum(f, "quadrature", m.quadrature, quadrature_from_string);
  if (const Json* b = f.object("basis")) {
    Fields g(*b, f.field("basis"));
    get_enum(g, "kind", m.basis.kind, basis_kind_from_string);
    g.get("K", m.basis.K);
    g.get("percentile", m.basis.percentile);
    g.done();
    if (m.basis.K < 2) throw Error(g.field("K") + ": must be >= 2");
    if (!(m.basis.percentile > 0.0 && m.basis.percentile <= 100.0))
      throw Error(g.field("percentile") + ": must lie in (0, 100]");
  }
  if (const Json* r = f.object("reg")) m.reg = reg_config_from_json(*r, f.field("reg"), m.reg);
  if (const Json* s = f.object("sinkhorn"))
    m.sinkhorn = sinkhorn_config_from_json(*s, f.field("sinkhorn"), m.sinkhorn);
  if (const Json* t = f.object("train")) m.train = train_config_from_json(*t, f.field("train"), m.train);
  f.done();
  return m;
}

Json to_json(const ExperimentConfig& e) {
  Json q = Json::array(), me = Json::array(), mo = Json::array();
  for (auto x : e.quadratures) q.push_back(to_string(x));
  for (auto x : e.methods) me.push_back(to_string(x));
  for (auto x : e.models) mo.push_back(to_string(x));
  return Json{{"preset", e.preset},
              {"seed", e.seed},
              {"dt_fine", e.dt_fine},
              {"dt_list", e.dt_list},
              {"M_list", e.M_list},
              {"trials", e.trials},
              {"quadratures", q},
              {"methods", me},
              {"models", mo},
              {"N_list", e.N_list},
              {"zero_gap_dt_list", e.zero_gap_dt_list},
              {"zero_gap_M_list", e.zero_gap_M_list},
              {"zero_gap_trials", e.zero_gap_trials},
              {"method", to_json(e.method)}};
}

ExperimentConfig experiment_config_from_json(const Json& j, const std::string& path) {
  Fields f(j, path);
  std::string preset;
  if (!f.get("preset", preset)) throw Error(f.field("preset") + ": missing");
  ExperimentConfig e;
  try {
    e = preset_config(preset);
  } catch (const Error& err) {
    throw Error(f.field("preset") + ": " + err.what());
  }
  f.get("seed", e.seed);
  f.get("dt_fine", e.dt_fine);
  f.get("dt_list", e.dt_list);
  f.get("M_list", e.M_list);
  f.get("trials", e.trials);
  get_enum_list(f, "quadratures", e.quadratures, quadrature_from_string);
  get_enum_list(f, "methods", e.methods, method_from_string);
  get_enum_list(f, "models", e.models, [](const std::string& s) { return family_from_string(s); });
  f.get("N_list", e.N_list);
  f.get("zero_gap_dt_list", e.zero_gap_dt_list);
  f.get("zero_gap_M_list", e.zero_gap_M_list);
  f.get("zero_gap_trials", e.zero_gap_trials);
  if (const Json* m = f.object("method")) e.method = method_config_from_json(*m, f.field("method"), e.method);
  f.done();
  if (e.dt_list.empty()) throw Error(f.field("dt_list") + ": must not be empty");
  for (double dt : e.dt_list)
    if (!(dt > 0.0)) throw Error(f.field("dt_list") + ": values must be > 0");
  if (!(e.dt_fine > 0.0)) throw Error(f.field("dt_fine") + ": must be > 0");
  if (e.trials < 1) throw Error(f.field("trials") + ": must be >= 1");
  for (auto M : e.M_list)
    if (M < 2) throw Error(f.field("M_list") + ": values must be >= 2");
  if (e.M_list.empty()) throw Error(f.field("M_list") + ": must not be empty");
  for (int N : e.N_list)
    if (N < 2) throw Error(f.field("N_list") + ": values must be >= 2");
  return e;
}

Json fit_report(const FitResult& f, const BasisSet& basis, const NormalSystem& ns) {
  Json A = Json::array();
  for (Eigen::Index i = 0; i < ns.A.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index k = 0; k < ns.A.cols(); ++k) row.push_back(ns.A(i, k));
    A.push_back(row);
  }
  Json diag = Json::object();
  for (const auto& [k, v] : f.diagnostics) diag[k] = v;
  return Json{{"method", f.method},
              {"theta", std::vector<double>(f.theta.data(), f.theta.data() + f.theta.size())},
              {"labels", basis.labels()},
              {"lambda", f.lambda},
              {"lcurve_curvature", f.curvature},
              {"lambda_fallback", f.lambda_fallback},
              {"loss", f.loss},
              {"residual_norm", f.residual_norm},
              {"cond_A", f.cond_A},
              {"diagnostics", diag},
              {"basis", to_json(basis)},
              {"normal_system",
               {{"quadrature", to_string(ns.quadrature)},
                {"M", ns.M},
                {"L", ns.L},
                {"N", ns.N},
                {"K_V", ns.K_V},
                {"dt", ns.dt},
                {"A", A},
                {"b", std::vector<double>(ns.b.data(), ns.b.data() + ns.b.size())}}}};
}

RunConfig run_config_from_json(const Json& j, const std::string& command) {
  Fields f(j, "");
  RunConfig c;
  std::string cmd;
  if (f.get("command", cmd) && cmd != command)
    throw Error("command: config is for '" + cmd + "' but '" + command + "' was requested");
  c.command = command;
  f.get("out", c.out);
  f.get("threads", c.threads);
  if (c.threads < 0) throw Error("threads: must be >= 0");
  std::uint64_t seed = 0;
  const bool has_seed = f.get("seed", seed);
  if (has_seed) {
    c.sim.seed = seed;
    c.strip_seed = seed;
    c.fit.train.seed = seed;
  }
  if (const Json* s = f.object("sim")) c.sim = sim_config_from_json(*s, "sim", c.sim);
  if (const Json* s = f.object("strip")) {
    Fields g(*s, "strip");
    std::string in;
    if (g.get("input", in) && command == "strip") c.input = in;
    g.get("seed", c.strip_seed);
    g.done();
  }
  if (const Json* s = f.object("fit")) {
    Json rest = *s;
    if (auto it = s->find("input"); it != s->end()) {
      if (!it->is_string()) throw Error("fit.input: expected a string");
      if (command == "fit") c.input = it->get<std::string>();
      rest.erase("input");
    }
    c.fit = method_config_from_json(rest, "fit", c.fit);
  }
  if (const Json* s = f.object("evaluate")) {
    Fields g(*s, "evaluate");
    std::string in;
    if (g.get("input", in) && command == "evaluate") c.input = in;
    g.get("fit", c.fit_dir);
    g.get("mc_points", c.mc_points);
    g.done();
    if (c.mc_points < 1) throw Error("evaluate.mc_points: must be >= 1");
  }
  if (const Json* s = f.object("experiment")) {
    c.experiment = experiment_config_from_json(*s, "experiment");
    if (has_seed && !s->contains("seed")) c.experiment.seed = seed;
  } else if (command == "experiment") {
    throw Error("experiment.preset: missing");
  }
  f.done();
  if (c.out.empty()) throw Error("out: missing (run directory)");
  if (command == "simulate") {
    c.sim.threads = c.threads;
    validate(c.sim);
  }
  if ((command == "strip" || command == "fit" || command == "evaluate") && c.input.empty())
    throw Error(command + ".input: missing (dataset path)");
  if (command != "simulate" && command != "experiment" && !c.input.empty() && !fs::exists(c.input))
    throw Error(command + ".input: no such file: " + c.input);
  if (command == "evaluate") {
    if (c.fit_dir.empty()) throw Error("evaluate.fit: missing (run directory of a fit)");
    if (!fs::exists(fs::path(c.fit_dir) / "fit.json"))
      throw Error("evaluate.fit: no fit.json in " + c.fit_dir);
  }
  c.fit.threads = c.threads;
  c.experiment.threads = c.threads;
  return c;
}

Json to_json(const RunConfig& c) {
  Json j{{"command", c.command}, {"out", c.out}};
  if (c.command == "simulate") j["sim"] = to_json(c.sim);
  if (c.command == "strip") j["strip"] = {{"input", c.input}, {"seed", c.strip_seed}};
  if (c.command == "fit") {
    j["fit"] = to_json(c.fit);
    j["fit"]["input"] = c.input;
  }
  if (c.command == "evaluate") j["evaluate"] = {{"input", c.input}, {"fit", c.fit_dir}, {"mc_points", c.mc_points}};
  if (c.command == "experiment") j["experiment"] = to_json(c.experiment);
  return j;
}

namespace {

// Tracks the files a command writes so a failure can remove them.
class RunDir {
 public:
  explicit RunDir(const std::string& dir) : dir_(dir) {
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_);
      created_ = true;
    } else if (!fs::is_directory(dir_)) {
      throw Error("out: " + dir + " exists and is not a directory");
    }
    const fs::path probe = dir_ / ".ips-write-test";
    std::ofstream t(probe);
    if (!t) throw Error("out: directory " + dir + " is not writable");
    t.close();
    fs::remove(probe);
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void wrote(const std::string& name) {
    written_.push_back(name);
    outputs_.push_back({{"path", name}, {"sha256", sha256_file(path(name))}});
  }

  void write_text(const std::string& name, const std::string& text) {
    write_file_atomic(path(name), text);
    wrote(name);
  }

  void cleanup() noexcept {
    std::error_code ec;
    for (const auto& n : written_) fs::remove(dir_ / n, ec);
    if (created_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
  }

  Json outputs() const { return outputs_; }

 private:
  fs::path dir_;
  bool created_ = false;
  std::vector<std::string> written_;
  Json outputs_ = Json::array();
};

Json input_entry(const std::string& path) {
  return Json{{"path", path}, {"sha256", sha256_file(path)}};
}

std::string config_hash(const Json& resolved) {
  const std::string s = resolved.dump();
  return sha256_hex(s.data(), s.size());
}

// manifest.json maps each command run in the directory to its record.
void write_manifest(RunDir& dir, const RunConfig& c, const Json& resolved, const Json& inputs) {
  Json m = Json::object();
  const std::string p = dir.path("manifest.json");
  if (fs::exists(p)) {
    std::ifstream in(p);
    try {
      m = Json::parse(in);
    } catch (const std::exception&) {
      m = Json::object();
    }
    if (!m.is_object()) m = Json::object();
  }
  if (!m.contains("format")) m["format"] = "ips-manifest";
  m["version"] = 1;
  m[c.command] = Json{{"config", resolved},
                      {"config_sha256", config_hash(resolved)},
                      {"inputs", inputs},
                      {"outputs", dir.outputs()}};
  write_file_atomic(p, m.dump(2) + "\n");
}

void log(const std::string& s) { std::cerr << "[ips] " << s << std::endl; }

void cmd_simulate(const RunConfig& c, RunDir& dir, Json& inputs) {
  // run-directory and thread count do not change the data, so they stay out of its hash
  Json resolved = to_json(c);
  resolved.erase("out");
  resolved.erase("threads");
  log("simulating M=" + std::to_string(c.sim.M) + " ensembles of N=" + std::to_string(c.sim.N) +
      " (" + to_string(c.sim.spec.family()) + ", " + to_string(c.sim.protocol) + ")");
  SnapshotDataset ds = simulate(c.sim);
  ds.header.inputs["config"] = config_hash(resolved);
  write_dataset(ds, dir.path("data.ipsd"));
  dir.wrote("data.ipsd");
  inputs = Json::array();
}

void cmd_strip(const RunConfig& c, RunDir& dir, Json& inputs) {
  inputs = Json::array({input_entry(c.input)});
  SnapshotDataset ds = read_dataset(c.input);
  if (!ds.header.labeled) throw Error("strip.input: dataset is already unlabeled");
  SnapshotDataset out = strip_labels(ds, c.strip_seed);
  out.header.inputs = {{"source", inputs[0]["sha256"].get<std::string>()}};
  write_dataset(out, dir.path("data.ipsd"));
  dir.wrote("data.ipsd");
}

void cmd_fit(const RunConfig& c, RunDir& dir, Json& inputs) {
  inputs = Json::array({input_entry(c.input)});
  const SnapshotDataset ds = read_dataset(c.input);
  const PotentialSpec& truth = ds.header.config.spec;
  if (c.fit.method == Method::LabeledMLE && !ds.header.labeled)
    throw Error("fit.method: labeled-mle needs a labeled dataset");
  log("fitting " + to_string(c.fit.method) + " on " + c.input);
  Json report;
  if (c.fit.method == Method::NN) {
    TrainConfig t = c.fit.train;
    t.threads = c.threads;
    const TrainResult r = train(ds, t, [](const EpochRecord& e) {
      std::ostringstream os;
      os << "epoch " << e.epoch << " loss " << e.loss;
      if (!std::isnan(e.val_loss)) os << " val " << e.val_loss;
      log(os.str());
    });
    write_checkpoint(dir.path("model.ipsnn"), r.V, r.Phi,
                     Json{{"inputs", inputs}, {"train", to_json(c.fit.train)}}.dump());
    dir.wrote("model.ipsnn");
    dir.write_text("history.csv", history_csv(r.history));
    report = Json{{"method", "nn"},
                  {"checkpoint", "model.ipsnn"},
                  {"best_epoch", r.best_epoch},
                  {"best_val_loss", r.best_val_loss},
                  {"early_stopped", r.early_stopped},
                  {"epochs_run", r.history.size()}};
  } else {
    const AnyFit f = fit_any(ds, truth, c.fit);
    report = fit_report(f.linear, f.basis, f.system);
  }
  report["config"] = to_json(c);
  report["inputs"] = inputs;
  dir.write_text("fit.json", report.dump(2) + "\n");
}

Json density_json(const DensityGrid& g) {
  return Json{{"lo", g.x.front()}, {"hi", g.x.back()}, {"grid_n", g.x.size()},
              {"bandwidth", g.bandwidth}, {"samples", g.samples}};
}

void cmd_evaluate(const RunConfig& c, RunDir& dir, Json& inputs) {
  const std::string fit_path = (fs::path(c.fit_dir) / "fit.json").string();
  inputs = Json::array({input_entry(fit_path), input_entry(c.input)});
  std::ifstream in(fit_path);
  Json fit;
  try {
    fit = Json::parse(in);
  } catch (const std::exception& e) {
    throw Error("evaluate.fit: cannot parse " + fit_path + ": " + e.what());
  }
  const SnapshotDataset ds = read_dataset(c.input);
  const PotentialSpec& truth = ds.header.config.spec;
  GradientEstimate est;
  const std::string method = fit.value("method", "");
  if (method == "nn") {
    const std::string ck = (fs::path(c.fit_dir) / fit.value("checkpoint", "model.ipsnn")).string();
    inputs.push_back(input_entry(ck));
    MlpPotential<float> V, Phi;
    read_checkpoint(ck, V, Phi);
    est = estimate_from_nets(V, Phi);
  } else {
    if (!fit.contains("basis") || !fit.contains("theta")) throw Error("evaluate.fit: report lacks basis/theta");
    const BasisSet basis = basis_from_json(fit["basis"], "fit.basis");
    const auto th = fit["theta"].get<std::vector<double>>();
    if (th.size() != basis.K()) throw Error("evaluate.fit: theta length does not match basis");
    est = estimate_from_basis(basis, Eigen::Map<const Eigen::VectorXd>(th.data(), th.size()));
  }
  log("evaluating against " + to_string(truth.family()) + " truth");
  const EvalContext ctx = make_eval_context(ds, truth, 10'000'000, c.mc_points);
  const GradErrors e = gradient_errors(est, ctx);
  Json out{{"method", method},
           {"model", to_string(truth.family())},
           {"err_gradV", e.V},
           {"err_gradPhi", e.Phi},
           {"metric", ctx.radial ? "radial-kde-trapezoid" : "monte-carlo"}};
  if (ctx.radial) out["density"] = {{"V", density_json(ctx.rho_V)}, {"Phi", density_json(ctx.rho_Phi)}};
  else out["mc_points"] = c.mc_points;
  out["config"] = to_json(c);
  out["inputs"] = inputs;
  dir.write_text("evaluation.json", out.dump(2) + "\n");
  std::cout << "err_gradV " << e.V << "\nerr_gradPhi " << e.Phi << std::endl;
}

void cmd_experiment(const RunConfig& c, RunDir& dir, Json& inputs) {
  inputs = Json::array();
  const Json resolved = to_json(c);
  const ExperimentOutput out = run_experiment(c.experiment, log);
  dir.write_text("results.csv", "# config_sha256 " + config_hash(resolved) + "\n" + out.csv());
}

}  // namespace

void run(const RunConfig& c) {
  RunDir dir(c.out);
  try {
    Json inputs;
    if (c.command == "simulate") cmd_simulate(c, dir, inputs);
    else if (c.command == "strip") cmd_strip(c, dir, inputs);
    else if (c.command == "fit") cmd_fit(c, dir, inputs);
    else if (c.command == "evaluate") cmd_evaluate(c, dir, inputs);
    else if (c.command == "experiment") cmd_experiment(c, dir, inputs);
    else throw Error("command: unknown '" + c.command + "'");
    write_manifest(dir, c, to_json(c), inputs);
  } catch (...) {
    dir.cleanup();
    throw;
  }
}

namespace {

// Flag text to JSON: numbers, booleans and arrays parse as JSON, anything else is a string.
Json flag_value(const std::string& s) {
  try {
    Json v = Json::parse(s);
    if (v.is_number() || v.is_boolean() || v.is_array() || v.is_object()) return v;
  } catch (const std::exception&) {
  }
  return s;
}

void set_path(Json& j, const std::string& dotted, const Json& v) {
  Json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw Error("--set: malformed key '" + dotted + "'");
    if (dot == std::string::npos) {
      (*cur)[key] = v;
      return;
    }
    Json& next = (*cur)[key];
    if (next.is_null()) next = Json::object();
    if (!next.is_object()) throw Error("--set: " + dotted.substr(0, dot) + " is not an object");
    cur = &next;
    start = dot + 1;
  }
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Learning interaction and confining potentials from unlabeled snapshots"};
  app.require_subcommand(1);
  struct Common {
    std::string config, out;
    std::vector<std::string> sets;
    int threads = -1;
    std::string seed;
  };
  std::map<std::string, Common> common;
  // (dotted path, flag value) overrides collected per command
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> flags;
  std::map<std::string, std::map<std::string, std::string>> raw;

  auto add_common = [&](CLI::App* s, const std::string& name) {
    auto& c = common[name];
    s->add_option("--config", c.config, "JSON run config");
    s->add_option("--out", c.out, "Run directory");
    s->add_option("--threads", c.threads, "Worker threads (default IPS_THREADS or all cores)");
    s->add_option("--seed", c.seed, "Seed");
    s->add_option("--set", c.sets, "Override any config key: path.to.key=value");
  };
  auto add_flag = [&](CLI::App* s, const std::string& name, const std::string& flag,
                      const std::string& path, const std::string& help) {
    s->add_option("--" + flag, raw[name][path], help);
  };

  auto* sim = app.add_subcommand("simulate", "Simulate a labeled snapshot ensemble");
  add_common(sim, "simulate");
  for (auto [flag, key] : std::vector<std::pair<std::string, std::string>>{
           {"N", "N"}, {"d", "d"}, {"M", "M"}, {"T", "T"}, {"sigma", "sigma"},
           {"dt-fine", "dt_fine"}, {"dt-obs", "dt_obs"}, {"protocol", "protocol"},
           {"init-std", "init_std"}, {"model", "model.family"}})
    add_flag(sim, "simulate", flag, "sim." + key, "sim." + key);

  auto* strip = app.add_subcommand("strip", "Destroy particle labels of a dataset");
  add_common(strip, "strip");
  add_flag(strip, "strip", "in", "strip.input", "Input dataset");

  auto* fit = app.add_subcommand("fit", "Fit potentials with one method");
  add_common(fit, "fit");
  add_flag(fit, "fit", "in", "fit.input", "Input dataset");
  add_flag(fit, "fit", "method", "fit.method", "selftest-lse | labeled-mle | sinkhorn-mle | nn");
  add_flag(fit, "fit", "quadrature", "fit.quadrature", "riemann | trapezoid");
  add_flag(fit, "fit", "basis", "fit.basis.kind", "oracle | rbf");
  add_flag(fit, "fit", "rbf-K", "fit.basis.K", "RBFs per block");
  add_flag(fit, "fit", "reg", "fit.reg.policy", "lcurve | fixed | none");
  add_flag(fit, "fit", "lambda", "fit.reg.lambda", "Fixed regularization strength");
  add_flag(fit, "fit", "epochs", "fit.train.epochs_max", "NN epoch budget");

  auto* ev = app.add_subcommand("evaluate", "Relative gradient errors of a fit");
  add_common(ev, "evaluate");
  add_flag(ev, "evaluate", "in", "evaluate.input", "Evaluation dataset");
  add_flag(ev, "evaluate", "fit", "evaluate.fit", "Run directory of the fit");
  add_flag(ev, "evaluate", "mc-points", "evaluate.mc_points", "Monte Carlo points (non-radial)");

  auto* ex = app.add_subcommand("experiment", "Run a named experiment preset");
  add_common(ex, "experiment");
  add_flag(ex, "experiment", "preset", "experiment.preset",
           "mscaling | method-comparison | boundary | cond-numbers | nonradial-nn");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  const std::string name = app.get_subcommands().front()->get_name();
  const Common& cm = common[name];
  try {
    Json j = Json::object();
    if (!cm.config.empty()) {
      std::ifstream in(cm.config);
      if (!in) throw Error("--config: cannot open " + cm.config);
      try {
        j = Json::parse(in);
      } catch (const std::exception& e) {
        throw Error("--config: " + cm.config + " is not valid JSON: " + e.what());
      }
      if (!j.is_object()) throw Error("--config: top level must be an object");
    }
    if (!cm.out.empty()) j["out"] = cm.out;
    if (!cm.seed.empty()) j["seed"] = flag_value(cm.seed);
    if (cm.threads >= 0) j["threads"] = cm.threads;
    for (const auto& [path, v] : raw[name])
      if (!v.empty()) set_path(j, path, flag_value(v));
    for (const auto& s : cm.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw Error("--set: expected key=value, got '" + s + "'");
      set_path(j, s.substr(0, eq), flag_value(s.substr(eq + 1)));
    }
    if (j.contains("threads") && j["threads"].is_number_integer() && j["threads"].get<int>() == 0)
      j.erase("threads");
    RunConfig c = run_config_from_json(j, name);
    if (c.threads == 0) c.threads = default_threads();
    c.fit.threads = c.threads;
    c.experiment.threads = c.threads;
    c.sim.threads = c.threads;
    const auto t0 = std::chrono::steady_clock::now();
    run(c);
    log(name + " done in " +
        std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) +
        " s; outputs in " + c.out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}

}  // namespace ips
