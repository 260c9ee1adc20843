#include "haru/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace haru {

namespace {

const char* reduction_name(BceReduction r) { return r == BceReduction::Sum ? "sum" : "mean"; }

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be > 0, got " + format_double(lr));
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(decay.factor > 0.0 && decay.factor <= 1.0)) throw ConfigError("train: decay factor must be in (0, 1]");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must be in [0, 1)");
  if (edge_width < 1) throw ConfigError("train: edge_width must be >= 1");
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv{{"train.lr", format_double(lr)},
               {"train.batch_size", std::to_string(batch_size)},
               {"train.epochs", std::to_string(epochs)},
               {"train.decay_factor", format_double(decay.factor)},
               {"train.decay_patience", std::to_string(decay.patience)},
               {"train.momentum", format_double(momentum)},
               {"train.seed", std::to_string(seed)},
               {"train.weight_mask", format_double(weights.mask)},
               {"train.weight_edge", format_double(weights.edge)},
               {"train.bce_reduction", reduction_name(reduction)},
               {"train.augment", augment ? "true" : "false"},
               {"train.free_angle", augment_options.free_angle ? "true" : "false"},
               {"train.max_angle_deg", format_double(augment_options.max_angle_deg)},
               {"train.edge_width", std::to_string(edge_width)},
               {"train.keep_every", std::to_string(keep_every)}};
  std::vector<double> side(weights.side.begin(), weights.side.end());
  kv["train.weight_side"] = join_doubles(side);
  return kv;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv, const TrainConfig& base) {
  TrainConfig c = base;
  c.lr = kv_double(kv, "train.lr", c.lr);
  c.batch_size = kv_uint(kv, "train.batch_size", c.batch_size);
  c.epochs = kv_uint(kv, "train.epochs", c.epochs);
  c.decay.factor = kv_double(kv, "train.decay_factor", c.decay.factor);
  c.decay.patience = kv_uint(kv, "train.decay_patience", c.decay.patience);
  c.momentum = kv_double(kv, "train.momentum", c.momentum);
  c.seed = kv_uint(kv, "train.seed", c.seed);
  c.weights.mask = kv_double(kv, "train.weight_mask", c.weights.mask);
  c.weights.edge = kv_double(kv, "train.weight_edge", c.weights.edge);
  if (auto it = kv.find("train.weight_side"); it != kv.end()) {
    const auto side = split_doubles(it->second);
    if (side.size() != c.weights.side.size()) {
      throw ConfigError("train.weight_side needs " + std::to_string(c.weights.side.size()) + " values, got " +
                        std::to_string(side.size()));
    }
    std::copy(side.begin(), side.end(), c.weights.side.begin());
  }
  const std::string red = kv_string(kv, "train.bce_reduction", reduction_name(c.reduction));
  if (red == "sum") c.reduction = BceReduction::Sum;
  else if (red == "mean") c.reduction = BceReduction::Mean;
  else throw ConfigError("train.bce_reduction must be sum or mean, got '" + red + "'");
  c.augment = kv_bool(kv, "train.augment", c.augment);
  c.augment_options.free_angle = kv_bool(kv, "train.free_angle", c.augment_options.free_angle);
  c.augment_options.max_angle_deg = kv_double(kv, "train.max_angle_deg", c.augment_options.max_angle_deg);
  c.edge_width = static_cast<int>(kv_uint(kv, "train.edge_width", static_cast<std::uint64_t>(c.edge_width)));
  c.keep_every = kv_uint(kv, "train.keep_every", c.keep_every);
  if (auto it = kv.find("train.checkpoint_dir"); it != kv.end()) c.checkpoint_dir = it->second;
  return c;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) { return from_key_values(kv, TrainConfig{}); }

TrainState TrainState::fresh(const TrainConfig& config) {
  TrainState s;
  s.lr = config.lr;
  s.rng.seed(config.seed);
  return s;
}

KeyValues TrainState::to_key_values() const {
  std::ostringstream rng_text;
  rng_text << rng;
  return {{"state.epoch", std::to_string(epoch)},
          {"state.step", std::to_string(step)},
          {"state.lr", format_double(lr)},
          {"state.best_loss", format_double(best_loss)},
          {"state.epochs_since_improvement", std::to_string(epochs_since_improvement)},
          {"state.epoch_losses", join_doubles(epoch_losses)},
          {"state.rng", rng_text.str()}};
}

TrainState TrainState::from_key_values(const KeyValues& kv) {
  TrainState s;
  s.epoch = kv_uint(kv, "state.epoch", 0);
  s.step = kv_uint(kv, "state.step", 0);
  s.lr = kv_double(kv, "state.lr", 0.0);
  s.best_loss = kv_double(kv, "state.best_loss", std::numeric_limits<double>::infinity());
  s.epochs_since_improvement = kv_uint(kv, "state.epochs_since_improvement", 0);
  s.epoch_losses = split_doubles(kv_string(kv, "state.epoch_losses", ""));
  std::istringstream rng_text(kv_string(kv, "state.rng", ""));
  rng_text >> s.rng;
  if (!rng_text) throw ConfigError("checkpoint carries no readable state.rng");
  return s;
}

Batch make_batch(const std::vector<Sample>& samples, int edge_width) {
  if (samples.empty()) throw UsageError("make_batch: empty batch");
  std::vector<LabelPair> targets;
  targets.reserve(samples.size());
  std::vector<const Image*> images;
  for (const auto& s : samples) {
    if (s.image.height != samples[0].image.height || s.image.width != samples[0].image.width) {
      throw DimensionError("make_batch: sample " + s.id + " differs in size from " + samples[0].id);
    }
    images.push_back(&s.image);
    targets.push_back(derive_targets(s.instances, edge_width));
  }
  std::vector<const BinaryMap*> masks, edges;
  for (const auto& t : targets) {
    masks.push_back(&t.mask);
    edges.push_back(&t.edge);
  }
  return Batch{batch_images(images), batch_binary(masks), batch_binary(edges)};
}

void sgd_update(const ParamList& params, double lr, double momentum, std::vector<std::vector<double>>& velocity) {
  if (momentum > 0.0 && velocity.size() != params.size()) {
    velocity.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) velocity[i].assign(params[i].tensor.numel(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    auto v = p.values();
    auto g = p.grad();
    if (g.size() != v.size()) continue;  // never reached by backward
    if (momentum > 0.0) {
      auto& vel = velocity[i];
      for (std::size_t k = 0; k < v.size(); ++k) {
        vel[k] = momentum * vel[k] + g[k];
        v[k] -= lr * vel[k];
      }
    } else {
      for (std::size_t k = 0; k < v.size(); ++k) v[k] -= lr * g[k];
    }
  }
}

namespace {

void check_finite(const LossBreakdown& loss, std::size_t step) {
  auto fail = [&](const std::string& term, double v) {
    throw NumericError("non-finite loss term " + term + " = " + format_double(v) + " at step " + std::to_string(step));
  };
  if (!std::isfinite(loss.zeta_mask)) fail("zeta_mask", loss.zeta_mask);
  if (!std::isfinite(loss.tau_edge)) fail("tau_edge", loss.tau_edge);
  for (std::size_t i = 0; i < loss.zeta_side.size(); ++i) {
    if (!std::isfinite(loss.zeta_side[i])) fail("zeta_side" + std::to_string(i + 1), loss.zeta_side[i]);
    if (!std::isfinite(loss.tau_side[i])) fail("tau_side" + std::to_string(i + 1), loss.tau_side[i]);
  }
  if (!std::isfinite(loss.total.item())) fail("total", loss.total.item());
}

}  // namespace

LossBreakdown sgd_step(Network& net, const Batch& batch, const TrainConfig& config, TrainState& state) {
  net.zero_grad();
  const NetworkOutput out = net.forward(batch.images);
  LossBreakdown loss = total_loss(out, batch.mask, batch.edge, config.weights, config.reduction);
  check_finite(loss, state.step + 1);
  backward(loss.total);
  sgd_update(net.parameters(), state.lr, config.momentum, state.velocity);
  ++state.step;
  return loss;
}

void write_log_header(std::ostream& log) {
  log << "epoch\tstep\tlr\ttotal\tzeta_mask\ttau_edge";
  for (int i = 1; i <= 6; ++i) log << "\tzeta_side" << i;
  for (int i = 1; i <= 6; ++i) log << "\ttau_side" << i;
  log << '\n';
}

void write_log_line(std::ostream& log, const TrainState& state, const LossBreakdown& loss) {
  log << state.epoch + 1 << '\t' << state.step << '\t' << format_double(state.lr) << '\t'
      << format_double(loss.total.item()) << '\t' << format_double(loss.zeta_mask) << '\t'
      << format_double(loss.tau_edge);
  for (double v : loss.zeta_side) log << '\t' << format_double(v);
  for (double v : loss.tau_side) log << '\t' << format_double(v);
  log << '\n';
}

TrainState train(Network& net, const std::vector<Sample>& dataset, const TrainConfig& config, TrainState state,
                 std::ostream* log) {
  config.validate();
  if (dataset.empty()) throw UsageError("train: empty dataset");
  net.set_training(true);
  if (!config.checkpoint_dir.empty()) std::filesystem::create_directories(config.checkpoint_dir);

  while (state.epoch < config.epochs) {
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.rng);

    double epoch_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Sample> chunk;
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = dataset[order[i]];
        if (config.augment) {
          // Per-sample stream keyed by (seed, epoch, id), independent of visiting order.
          Rng rng(sample_seed(config.seed + 0x9e3779b97f4a7c15ULL * (state.epoch + 1), s.id));
          chunk.push_back(augment(s, rng, config.augment_options));
        } else {
          chunk.push_back(s);
        }
      }
      const LossBreakdown loss = sgd_step(net, make_batch(chunk, config.edge_width), config, state);
      epoch_total += loss.total.item();
      ++batches;
      if (log) write_log_line(*log, state, loss);
    }

    const double epoch_loss = epoch_total / static_cast<double>(batches);
    state.epoch_losses.push_back(epoch_loss);
    if (epoch_loss < state.best_loss) {
      state.best_loss = epoch_loss;
      state.epochs_since_improvement = 0;
    } else if (++state.epochs_since_improvement > config.decay.patience) {
      state.lr *= config.decay.factor;
      state.epochs_since_improvement = 0;
    }
    ++state.epoch;

    if (!config.checkpoint_dir.empty()) {
      save_checkpoint(config.checkpoint_dir / "last.ckpt", net, config, state);
      if (config.keep_every > 0 && state.epoch % config.keep_every == 0) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", state.epoch);
        save_checkpoint(config.checkpoint_dir / name, net, config, state);
      }
    }
    if (log) log->flush();
  }
  return state;
}

TrainState train(Network& net, const std::vector<Sample>& dataset, const TrainConfig& config, std::ostream* log) {
  return train(net, dataset, config, TrainState::fresh(config), log);
}

void save_checkpoint(const std::filesystem::path& path, const Network& net, const TrainConfig& config,
                     const TrainState& state) {
  KeyValues meta = config.to_key_values();
  for (const auto& [k, v] : state.to_key_values()) meta[k] = v;
  ParamList extra;
  if (!state.velocity.empty()) {
    const ParamList params = net.parameters();
    for (std::size_t i = 0; i < params.size() && i < state.velocity.size(); ++i) {
      extra.push_back({"velocity/" + params[i].name, Tensor(params[i].tensor.shape(), state.velocity[i])});
    }
  }
  // Write to a sibling file and rename so an interrupted save never leaves a torn checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  write_checkpoint(tmp, make_checkpoint(net, meta, extra));
  std::filesystem::rename(tmp, path);
}

TrainingCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  Network net(NetworkConfig::from_key_values(ckpt.metadata));
  const ParamList rest = restore_network(ckpt, net);
  TrainConfig config = TrainConfig::from_key_values(ckpt.metadata);
  TrainState state = TrainState::from_key_values(ckpt.metadata);
  if (!rest.empty()) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& e : rest) by_name[e.name] = &e.tensor;
    const ParamList params = net.parameters();
    state.velocity.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto it = by_name.find("velocity/" + params[i].name);
      if (it == by_name.end()) throw ConfigError("checkpoint is missing velocity/" + params[i].name);
      state.velocity[i].assign(it->second->values().begin(), it->second->values().end());
    }
  }
  return TrainingCheckpoint{std::move(net), std::move(config), std::move(state)};
}

}  // namespace haru
