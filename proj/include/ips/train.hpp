#pragma once

// Self-test loss of MLP potentials over batches of snapshot pairs, and the
// Adam training loop with cosine schedules, per-network clipping and early
// stopping on a held-out validation loss.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ips/nn.hpp"
#include "ips/simulate.hpp"

namespace ips {

struct PairRef {
  std::size_t m = 0, l = 0;  // snapshots l and l + 1 of ensemble m
};

/// Stochastic form of the loss per sampled (m, l). Pairs uses the energy change
/// E(X_{l+1}) - E(X_l); Telescoped uses (E(X_L) - E(X_0)) / L. Averaged over
/// all l of an ensemble both give the same value.
enum class LossEstimator { Pairs, Telescoped };

std::string to_string(LossEstimator e);
LossEstimator loss_estimator_from_string(const std::string& s);

/// (1/B) sum over pairs of [J_diss dt / 2 - sigma^2 J_diff dt / 2 + delta E_f].
/// When gV / gPhi are non-null the parameter gradients of that value are
/// accumulated into them. Throws on a non-finite loss, naming the batch.
template <class S>
double selftest_nn_loss(const MlpPotential<S>& V, const MlpPotential<S>& Phi,
                        const SnapshotDataset& ds, std::span<const PairRef> pairs,
                        Params<S>* gV, Params<S>* gPhi, int threads = 1,
                        const std::string& batch_id = "",
                        LossEstimator estimator = LossEstimator::Pairs);

struct TrainConfig {
  double lr_V = 1e-4;
  double lr_Phi = 5e-4;
  int epochs_max = 200;  // cosine horizon and epoch budget
  double eta_min_ratio = 0.01;
  double clip_norm = 1.0;
  int batch_size = 256;
  int eval_every = 5;
  int patience = 20;  // evaluations without improvement
  std::uint64_t seed = 42;
  double val_fraction = 0.1;
  std::size_t val_pairs_max = 0;    // 0: all validation pairs
  std::size_t pairs_per_epoch = 0;  // 0: all training pairs
  Activation activation = Activation::Softplus;
  std::vector<int> hidden{64, 64, 64};
  LossEstimator estimator = LossEstimator::Pairs;
  bool radial = true;  // radial networks for V and Phi; otherwise vector + evenness wrapper
  double divergence_threshold = 1e6;
  int threads = 0;
};

void validate(const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;  // mean training batch loss
  double lr_V = 0.0, lr_Phi = 0.0;
  double val_loss = 0.0;  // NaN when not evaluated this epoch
};

struct TrainResult {
  MlpPotential<float> V, Phi;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  bool early_stopped = false;
};

/// Cosine-annealed rate at (0-based) epoch e.
double cosine_rate(double eta0, double eta_min_ratio, int epoch, int horizon);

/// Scales g so its l2 norm is at most c; returns the pre-clip norm.
template <class S>
double clip_gradient(Params<S>& g, double c);

class Adam {
 public:
  Adam() = default;
  template <class S>
  void step(Params<S>& p, const Params<S>& g, double lr);

 private:
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

/// Trains on the first (1 - val_fraction) of the ensembles and early-stops on
/// the loss of the rest. `on_epoch` is called after every epoch.
TrainResult train(const SnapshotDataset& ds, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

std::string history_csv(const std::vector<EpochRecord>& h);

/// Checkpoint: magic "IPSMLP\0\0", uint64 LE header length, JSON header
/// (shapes, activation, mode, dim), LE float64 weights (W row-major then b,
/// layer by layer, V network first).
void write_checkpoint(const std::string& path, const MlpPotential<float>& V,
                      const MlpPotential<float>& Phi, const std::string& extra_json = "{}");
void read_checkpoint(const std::string& path, MlpPotential<float>& V, MlpPotential<float>& Phi);

}  // namespace ips
