#include "ips/nn.hpp"

#include <cmath>

#include "ips/rng.hpp"

namespace ips {
namespace {

template <class S>
using Arr = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>;

// sigma and its first three derivatives at z.
template <class S>
void activate(Activation act, const Mat<S>& z, Arr<S>& s0, Arr<S>& s1, Arr<S>& s2,
              Arr<S>* s3) {
  const auto za = z.array();
  if (act == Activation::Softplus) {
    const Arr<S> sg = S(1) / (S(1) + (-za).exp());
    s0 = za.max(S(0)) + (-(za.abs())).exp().log1p();
    s1 = sg;
    s2 = sg * (S(1) - sg);
    if (s3) *s3 = s2 * (S(1) - S(2) * sg);
  } else {
    const Arr<S> t = za.tanh();
    const Arr<S> q = S(1) - t * t;
    s0 = t;
    s1 = q;
    s2 = S(-2) * t * q;
    if (s3) *s3 = (S(-2) + S(6) * t * t) * q;
  }
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::Softplus ? "softplus" : "tanh"; }

Activation activation_from_string(const std::string& s) {
  if (s == "softplus") return Activation::Softplus;
  if (s == "tanh") return Activation::Tanh;
  throw Error("unknown activation '" + s + "' (expected softplus or tanh)");
}

std::string to_string(NetMode m) {
  switch (m) {
    case NetMode::RadialV: return "radial_v";
    case NetMode::RadialPhi: return "radial_phi";
    case NetMode::VectorV: return "vector_v";
    case NetMode::VectorPhiEven: return "vector_phi_even";
  }
  return "vector_v";
}

NetMode net_mode_from_string(const std::string& s) {
  for (NetMode m : {NetMode::RadialV, NetMode::RadialPhi, NetMode::VectorV, NetMode::VectorPhiEven})
    if (to_string(m) == s) return m;
  throw Error("unknown network mode '" + s + "'");
}

template <class S>
void Params<S>::set_zero_like(const Params& o) {
  W.resize(o.W.size());
  b.resize(o.b.size());
  for (std::size_t l = 0; l < o.W.size(); ++l) {
    W[l].setZero(o.W[l].rows(), o.W[l].cols());
    b[l].setZero(o.b[l].size());
  }
}

template <class S>
double Params<S>::squared_norm() const {
  double s = 0.0;
  for (std::size_t l = 0; l < W.size(); ++l)
    s += W[l].template cast<double>().squaredNorm() + b[l].template cast<double>().squaredNorm();
  return s;
}

template <class S>
void Params<S>::scale(S c) {
  for (std::size_t l = 0; l < W.size(); ++l) {
    W[l] *= c;
    b[l] *= c;
  }
}

template <class S>
void Params<S>::add(const Params& o) {
  for (std::size_t l = 0; l < W.size(); ++l) {
    W[l] += o.W[l];
    b[l] += o.b[l];
  }
}

template <class S>
std::size_t Params<S>::count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < W.size(); ++l) n += W[l].size() + b[l].size();
  return n;
}

template <class S>
Mlp<S>::Mlp(int in, const std::vector<int>& hidden, Activation act, std::uint64_t seed)
    : in_(in), act_(act) {
  if (in < 1) throw Error("mlp input dimension must be >= 1");
  widths_.push_back(in);
  for (int h : hidden) {
    if (h < 1) throw Error("mlp hidden widths must be >= 1");
    widths_.push_back(h);
  }
  widths_.push_back(1);
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const int fin = widths_[l], fout = widths_[l + 1];
    const double a = 1.0 / std::sqrt(static_cast<double>(fin));
    Mat<S> W(fout, fin);
    Vec<S> b(fout);
    for (int i = 0; i < fout; ++i)
      for (int j = 0; j < fin; ++j) W(i, j) = static_cast<S>(a * (2.0 * rng.uniform() - 1.0));
    for (int i = 0; i < fout; ++i) b[i] = static_cast<S>(a * (2.0 * rng.uniform() - 1.0));
    p_.W.push_back(std::move(W));
    p_.b.push_back(std::move(b));
  }
}

template <class S>
void Mlp<S>::forward(const Mat<S>& X, bool jets, Tape<S>& tape) const {
  if (X.rows() != in_) throw Error("mlp: input dimension mismatch");
  const int P = static_cast<int>(X.cols());
  const int streams = jets ? 1 + 2 * in_ : 1;
  const std::size_t layers = p_.W.size();
  tape.points = P;
  tape.streams = streams;
  tape.inputs.resize(layers);
  tape.pre.resize(layers);

  Mat<S> A(in_, static_cast<Eigen::Index>(streams) * P);
  A.leftCols(P) = X;
  if (jets) {
    A.rightCols(static_cast<Eigen::Index>(2 * in_) * P).setZero();
    for (int k = 0; k < in_; ++k) A.block(k, (1 + k) * P, 1, P).setOnes();
  }
  Arr<S> s0, s1, s2;
  for (std::size_t l = 0; l < layers; ++l) {
    Mat<S> Z = p_.W[l] * A;
    Z.leftCols(P).colwise() += p_.b[l];
    tape.inputs[l] = std::move(A);
    if (l + 1 == layers) {
      tape.value = Z.row(0).head(P).transpose();
      if (jets) {
        tape.d1.resize(in_, P);
        tape.d2.resize(in_, P);
        for (int k = 0; k < in_; ++k) {
          tape.d1.row(k) = Z.block(0, (1 + k) * P, 1, P);
          tape.d2.row(k) = Z.block(0, (1 + in_ + k) * P, 1, P);
        }
      } else {
        tape.d1.resize(0, 0);
        tape.d2.resize(0, 0);
      }
      tape.pre[l].resize(0, 0);
      break;
    }
    const Eigen::Index H = Z.rows();
    activate<S>(act_, Z.leftCols(P), s0, s1, s2, nullptr);
    A.resize(H, Z.cols());
    A.leftCols(P) = s0.matrix();
    for (int k = 0; k < (jets ? in_ : 0); ++k) {
      const auto z1 = Z.middleCols((1 + k) * P, P).array();
      const auto z2 = Z.middleCols((1 + in_ + k) * P, P).array();
      A.middleCols((1 + k) * P, P) = (s1 * z1).matrix();
      A.middleCols((1 + in_ + k) * P, P) = (s2 * z1 * z1 + s1 * z2).matrix();
    }
    tape.pre[l] = std::move(Z);
  }
}

template <class S>
void Mlp<S>::backward(const Tape<S>& tape, const Vec<S>& val_adj, const Mat<S>& d1_adj,
                      const Mat<S>& d2_adj, Params<S>& g) const {
  const int P = tape.points;
  const bool jets = tape.streams > 1;
  const std::size_t layers = p_.W.size();
  if (g.W.size() != layers) g.set_zero_like(p_);
  Mat<S> Zbar(1, static_cast<Eigen::Index>(tape.streams) * P);
  Zbar.leftCols(P) = val_adj.transpose();
  if (jets) {
    for (int k = 0; k < in_; ++k) {
      if (d1_adj.size()) Zbar.block(0, (1 + k) * P, 1, P) = d1_adj.row(k);
      else Zbar.block(0, (1 + k) * P, 1, P).setZero();
      if (d2_adj.size()) Zbar.block(0, (1 + in_ + k) * P, 1, P) = d2_adj.row(k);
      else Zbar.block(0, (1 + in_ + k) * P, 1, P).setZero();
    }
  }
  Arr<S> s0, s1, s2, s3;
  for (std::size_t l = layers; l-- > 0;) {
    g.W[l].noalias() += Zbar * tape.inputs[l].transpose();
    g.b[l] += Zbar.leftCols(P).rowwise().sum();
    if (l == 0) break;
    Mat<S> Hbar = p_.W[l].transpose() * Zbar;
    const Mat<S>& Z = tape.pre[l - 1];
    activate<S>(act_, Z.leftCols(P), s0, s1, s2, jets ? &s3 : nullptr);
    Mat<S> Zb(Hbar.rows(), Hbar.cols());
    Arr<S> z0bar = Hbar.leftCols(P).array() * s1;
    for (int k = 0; k < (jets ? in_ : 0); ++k) {
      const auto z1 = Z.middleCols((1 + k) * P, P).array();
      const auto z2 = Z.middleCols((1 + in_ + k) * P, P).array();
      const auto h1 = Hbar.middleCols((1 + k) * P, P).array();
      const auto h2 = Hbar.middleCols((1 + in_ + k) * P, P).array();
      z0bar += h1 * s2 * z1 + h2 * (s3 * z1 * z1 + s2 * z2);
      Zb.middleCols((1 + k) * P, P) = (h1 * s1 + S(2) * h2 * s2 * z1).matrix();
      Zb.middleCols((1 + in_ + k) * P, P) = (h2 * s1).matrix();
    }
    Zb.leftCols(P) = z0bar.matrix();
    Zbar = std::move(Zb);
  }
}

template <class S>
template <class T>
Mlp<T> Mlp<S>::cast() const {
  Mlp<T> o;
  o.in_ = in_;
  o.widths_ = widths_;
  o.act_ = act_;
  for (std::size_t l = 0; l < p_.W.size(); ++l) {
    o.p_.W.push_back(p_.W[l].template cast<T>());
    o.p_.b.push_back(p_.b[l].template cast<T>());
  }
  return o;
}

template <class S>
MlpPotential<S> MlpPotential<S>::make(NetMode mode, int dim, Activation act, std::uint64_t seed,
                                      const std::vector<int>& hidden) {
  MlpPotential p;
  p.mode = mode;
  p.dim = dim;
  const bool rad = mode == NetMode::RadialV || mode == NetMode::RadialPhi;
  p.net = Mlp<S>(rad ? 1 : dim, hidden, act, seed);
  return p;
}

template <class S>
PotentialEval mlp_value_grad_laplacian(const MlpPotential<S>& pot, std::span<const double> x) {
  if (static_cast<int>(x.size()) != pot.dim) throw Error("mlp potential: point dimension mismatch");
  const int d = pot.dim;
  PotentialEval e;
  e.grad.assign(d, 0.0);
  Tape<S> t;
  if (pot.radial()) {
    const double r = std::sqrt(norm2(x));
    const double re = std::max(r, kRadialFloor);
    Mat<S> X(1, 1);
    X(0, 0) = static_cast<S>(r);
    pot.net.forward(X, true, t);
    const double g0 = t.value[0], g1 = t.d1(0, 0), g2 = t.d2(0, 0);
    e.value = g0;
    for (int k = 0; k < d; ++k) e.grad[k] = g1 * x[k] / re;
    e.laplacian = g2 + (d - 1) / re * g1;
    return e;
  }
  if (pot.mode == NetMode::VectorV) {
    Mat<S> X(d, 1);
    for (int k = 0; k < d; ++k) X(k, 0) = static_cast<S>(x[k]);
    pot.net.forward(X, true, t);
    e.value = t.value[0];
    for (int k = 0; k < d; ++k) {
      e.grad[k] = t.d1(k, 0);
      e.laplacian += t.d2(k, 0);
    }
    return e;
  }
  Mat<S> X(d, 2);
  for (int k = 0; k < d; ++k) {
    X(k, 0) = static_cast<S>(x[k]);
    X(k, 1) = static_cast<S>(-x[k]);
  }
  pot.net.forward(X, true, t);
  e.value = 0.5 * (static_cast<double>(t.value[0]) + static_cast<double>(t.value[1]));
  for (int k = 0; k < d; ++k) {
    e.grad[k] = 0.5 * (static_cast<double>(t.d1(k, 0)) - static_cast<double>(t.d1(k, 1)));
    e.laplacian += 0.5 * (static_cast<double>(t.d2(k, 0)) + static_cast<double>(t.d2(k, 1)));
  }
  return e;
}

template <class S>
Eigen::VectorXd mlp_radial_derivative(const MlpPotential<S>& pot, const Eigen::VectorXd& r) {
  if (!pot.radial()) throw Error("mlp_radial_derivative: network is not radial");
  Tape<S> t;
  pot.net.forward(r.transpose().template cast<S>(), true, t);
  return t.d1.row(0).transpose().template cast<double>();
}

template <class S>
Eigen::MatrixXd mlp_gradients(const MlpPotential<S>& pot, const Eigen::MatrixXd& X) {
  const Eigen::Index P = X.cols();
  const int d = pot.dim;
  Eigen::MatrixXd G(d, P);
  Tape<S> t;
  if (pot.radial()) {
    Eigen::VectorXd r = X.colwise().norm().transpose();
    const Eigen::VectorXd g1 = mlp_radial_derivative(pot, r);
    for (Eigen::Index p = 0; p < P; ++p)
      G.col(p) = g1[p] / std::max(r[p], kRadialFloor) * X.col(p);
    return G;
  }
  if (pot.mode == NetMode::VectorV) {
    pot.net.forward(X.template cast<S>(), true, t);
    return t.d1.template cast<double>();
  }
  Mat<S> XX(d, 2 * P);
  XX.leftCols(P) = X.template cast<S>();
  XX.rightCols(P) = -X.template cast<S>();
  pot.net.forward(XX, true, t);
  const Eigen::MatrixXd d1 = t.d1.template cast<double>();
  return 0.5 * (d1.leftCols(P) - d1.rightCols(P));
}

template struct Params<float>;
template struct Params<double>;
template class Mlp<float>;
template class Mlp<double>;
template Mlp<double> Mlp<float>::cast<double>() const;
template Mlp<float> Mlp<double>::cast<float>() const;
template Mlp<float> Mlp<float>::cast<float>() const;
template Mlp<double> Mlp<double>::cast<double>() const;
template struct MlpPotential<float>;
template struct MlpPotential<double>;
template PotentialEval mlp_value_grad_laplacian(const MlpPotential<float>&, std::span<const double>);
template PotentialEval mlp_value_grad_laplacian(const MlpPotential<double>&, std::span<const double>);
template Eigen::MatrixXd mlp_gradients(const MlpPotential<float>&, const Eigen::MatrixXd&);
template Eigen::MatrixXd mlp_gradients(const MlpPotential<double>&, const Eigen::MatrixXd&);
template Eigen::VectorXd mlp_radial_derivative(const MlpPotential<float>&, const Eigen::VectorXd&);
template Eigen::VectorXd mlp_radial_derivative(const MlpPotential<double>&, const Eigen::VectorXd&);

}  // namespace ips
