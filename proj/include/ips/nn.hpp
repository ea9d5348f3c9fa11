#pragma once

// Multilayer perceptron potentials with exact input gradients and Laplacians.
// Each input direction carries a (value, first, second) derivative jet
// through the layers; all jets of a batch of points are stacked as matrix
// columns so every layer is one matrix product. Backpropagation runs through
// the jets, giving parameter gradients of any loss that depends on values,
// gradients and Laplacians.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ips/common.hpp"

namespace ips {

enum class Activation { Softplus, Tanh };
enum class NetMode { RadialV, RadialPhi, VectorV, VectorPhiEven };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);
std::string to_string(NetMode m);
NetMode net_mode_from_string(const std::string& s);

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Parameter-shaped container (weights and biases per layer).
template <class S>
struct Params {
  std::vector<Mat<S>> W;
  std::vector<Vec<S>> b;

  void set_zero_like(const Params& o);
  double squared_norm() const;
  void scale(S c);
  void add(const Params& o);
  std::size_t count() const;
};

/// Forward state kept for backpropagation.
template <class S>
struct Tape {
  int points = 0;
  int streams = 1;              // 1 (value only) or 1 + 2 * input dim
  std::vector<Mat<S>> inputs;   // stacked layer inputs
  std::vector<Mat<S>> pre;      // stacked pre-activations (hidden layers)
  Vec<S> value;                 // [points]
  Mat<S> d1, d2;                // [in, points]: du/dx_k, d2u/dx_k^2
};

template <class S>
class Mlp {
 public:
  Mlp() = default;
  Mlp(int in, const std::vector<int>& hidden, Activation act, std::uint64_t seed);

  int input_dim() const { return in_; }
  Activation activation() const { return act_; }
  const std::vector<int>& widths() const { return widths_; }
  Params<S>& params() { return p_; }
  const Params<S>& params() const { return p_; }

  /// X is [in, points]. With jets=false only values are computed.
  void forward(const Mat<S>& X, bool jets, Tape<S>& tape) const;
  /// Accumulates into g the parameter gradient of sum_p [val_adj_p u_p +
  /// sum_k d1_adj(k,p) du_p/dx_k + d2_adj(k,p) d2u_p/dx_k^2]. Adjoint
  /// matrices may be empty when the tape has no jets.
  void backward(const Tape<S>& tape, const Vec<S>& val_adj, const Mat<S>& d1_adj,
                const Mat<S>& d2_adj, Params<S>& g) const;

  template <class T>
  Mlp<T> cast() const;

 private:
  template <class T>
  friend class Mlp;
  int in_ = 1;
  std::vector<int> widths_;  // [in, hidden..., 1]
  Activation act_ = Activation::Softplus;
  Params<S> p_;
};

/// Value, gradient and Laplacian of a potential at one point.
struct PotentialEval {
  double value = 0.0;
  std::vector<double> grad;
  double laplacian = 0.0;
};

/// An MLP together with how its input is formed from x.
template <class S>
struct MlpPotential {
  Mlp<S> net;
  NetMode mode = NetMode::VectorV;
  int dim = 2;

  static MlpPotential make(NetMode mode, int dim, Activation act, std::uint64_t seed,
                           const std::vector<int>& hidden = {64, 64, 64});
  bool radial() const { return mode == NetMode::RadialV || mode == NetMode::RadialPhi; }
};

/// Smallest radius used by the radial chain rule.
inline constexpr double kRadialFloor = 1e-8;

template <class S>
PotentialEval mlp_value_grad_laplacian(const MlpPotential<S>& pot, std::span<const double> x);

/// Gradient-only batch evaluation: X is [d, points], returns [d, points].
template <class S>
Eigen::MatrixXd mlp_gradients(const MlpPotential<S>& pot, const Eigen::MatrixXd& X);

/// Radial derivative g'(r) for radial modes at each r.
template <class S>
Eigen::VectorXd mlp_radial_derivative(const MlpPotential<S>& pot, const Eigen::VectorXd& r);

}  // namespace ips
