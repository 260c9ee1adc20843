#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "haru/data.hpp"
#include "haru/loss.hpp"
#include "haru/network.hpp"

namespace haru {

struct DecayPolicy {
  double factor = 0.5;
  std::size_t patience = 10;  // epochs without improvement of the training loss
};

struct TrainConfig {
  double lr = 1e-5;
  std::size_t batch_size = 4;
  std::size_t epochs = 200;
  DecayPolicy decay;
  double momentum = 0.0;
  std::uint64_t seed = 0;
  LossWeights weights;
  BceReduction reduction = BceReduction::Sum;
  bool augment = false;
  AugmentOptions augment_options;
  int edge_width = 1;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::size_t keep_every = 0;            // also keep epoch_NNNN.ckpt every k epochs; 0 keeps only last.ckpt

  void validate() const;
  // "train.<key>" lines; checkpoint_dir is not part of the snapshot.
  KeyValues to_key_values() const;
  // Keys absent from kv keep the values of `base`.
  static TrainConfig from_key_values(const KeyValues& kv, const TrainConfig& base);
  static TrainConfig from_key_values(const KeyValues& kv);
};

struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  std::size_t step = 0;   // completed SGD steps
  double lr = 0.0;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t epochs_since_improvement = 0;
  std::vector<double> epoch_losses;  // mean total loss per completed epoch
  Rng rng;
  std::vector<std::vector<double>> velocity;  // one buffer per parameter when momentum > 0

  static TrainState fresh(const TrainConfig& config);
  KeyValues to_key_values() const;
  static TrainState from_key_values(const KeyValues& kv);
};

struct Batch {
  Tensor images;  // [N,3,H,W]
  Tensor mask;    // [N,1,H,W]
  Tensor edge;
};

Batch make_batch(const std::vector<Sample>& samples, int edge_width);

// p ← p − lr·v with v ← momentum·v + grad (v = grad when momentum is 0).
void sgd_update(const ParamList& params, double lr, double momentum, std::vector<std::vector<double>>& velocity);

// Zero grads, forward, loss, backward, update. Returns the loss measured before the update.
// A non-finite loss raises NumericError naming the offending term.
LossBreakdown sgd_step(Network& net, const Batch& batch, const TrainConfig& config, TrainState& state);

// Text log: a header line, then one line per step.
void write_log_header(std::ostream& log);
void write_log_line(std::ostream& log, const TrainState& state, const LossBreakdown& loss);

// Runs epochs state.epoch+1 .. config.epochs. Each epoch visits the samples in a freshly shuffled
// order, checkpoints at its end and applies reduce-on-plateau to the learning rate.
TrainState train(Network& net, const std::vector<Sample>& dataset, const TrainConfig& config, TrainState state,
                 std::ostream* log = nullptr);
TrainState train(Network& net, const std::vector<Sample>& dataset, const TrainConfig& config,
                 std::ostream* log = nullptr);

void save_checkpoint(const std::filesystem::path& path, const Network& net, const TrainConfig& config,
                     const TrainState& state);

struct TrainingCheckpoint {
  Network net;
  TrainConfig config;
  TrainState state;
};
TrainingCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace haru
