#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "augment.hpp"
#include "data.hpp"
#include "encoder.hpp"
#include "error.hpp"
#include "loss.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace tscn {

/// Which layers a stage keeps fixed.
struct FreezeSpec {
  bool all_but_readout = false;
  std::set<std::size_t> layers;

  static FreezeSpec none() { return {}; }
  static FreezeSpec readout_only() { return {true, {}}; }

  std::set<std::size_t> resolve(std::size_t layer_count) const {
    if (all_but_readout) return tscn::all_but_readout(layer_count);
    return layers;
  }
  bool is_none() const { return !all_but_readout && layers.empty(); }
};

struct StageConfig {
  std::string name;
  std::size_t epochs = 0;
  double peak_lr = 0.0;
  std::size_t warmup_epochs = 0;
  bool anneal = true;
  FreezeSpec freeze;
  std::optional<std::size_t> readout_dim;  // nullopt = keep the current readout
  KernelSpec kernel = KernelSpec::cauchy();

  void validate() const {
    if (warmup_epochs > epochs)
      throw ValidationError("stage '" + name + "': warmup epochs exceed total epochs");
    if (!(peak_lr > 0.0)) throw ValidationError("stage '" + name + "': peak learning rate must be positive");
    if (readout_dim && *readout_dim < 1) throw ValidationError("stage '" + name + "': readout dim must be >= 1");
    kernel.validate();
  }
};

/// Linear learning-rate scaling rule: 0.03 * b / 256.
inline double scaled_peak_lr(std::size_t batch_size) { return 0.03 * static_cast<double>(batch_size) / 256.0; }

struct ProtocolConfig {
  StageConfig pretrain;
  StageConfig readout;
  StageConfig finetune;
  std::size_t batch_size = 128;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const {
    pretrain.validate();
    readout.validate();
    finetune.validate();
    if (!pretrain.readout_dim) throw ValidationError("pretrain stage must set an explicit readout dim");
    if (!readout.freeze.all_but_readout)
      throw ValidationError("readout stage must freeze every layer except the readout");
    if (!finetune.freeze.is_none()) throw ValidationError("finetune stage must not freeze any layer");
    if (batch_size < 2) throw ValidationError("batch size must be >= 2");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must be in [0, 1)");
  }

  std::size_t total_epochs() const { return pretrain.epochs + readout.epochs + finetune.epochs; }

  /// Three-stage schedule: pretrain at high dimension, fit a fresh readout
  /// with everything else frozen (constant LR), then fine-tune everything at
  /// peak / 1000 with warmup and cosine annealing.
  static ProtocolConfig three_stage(std::size_t batch_size, std::size_t pretrain_epochs, std::size_t readout_epochs,
                                    std::size_t finetune_epochs, std::size_t warmup_epochs,
                                    std::size_t pretrain_dim = 64, std::size_t final_dim = 2,
                                    KernelSpec pretrain_kernel = KernelSpec::cauchy()) {
    const double peak = scaled_peak_lr(batch_size);
    ProtocolConfig cfg;
    cfg.batch_size = batch_size;
    cfg.pretrain = {"pretrain", pretrain_epochs, peak, std::min(warmup_epochs, pretrain_epochs), true,
                    FreezeSpec::none(), pretrain_dim, pretrain_kernel};
    cfg.readout = {"readout", readout_epochs, peak, 0, false, FreezeSpec::readout_only(), final_dim,
                   KernelSpec::cauchy()};
    cfg.finetune = {"finetune", finetune_epochs, peak / 1000.0, std::min(warmup_epochs, finetune_epochs), true,
                    FreezeSpec::none(), std::nullopt, KernelSpec::cauchy()};
    return cfg;
  }

  /// Desk-scale default: 50 + 5 + 45 epochs, b = 128, 64D Cauchy pretraining.
  static ProtocolConfig desk_default() { return three_stage(128, 50, 5, 45, 5); }

  /// End-to-end training directly at `dim` for `epochs` (the two later stages are empty).
  static ProtocolConfig direct(std::size_t batch_size, std::size_t epochs, std::size_t warmup_epochs,
                               std::size_t dim = 2, KernelSpec kernel = KernelSpec::cauchy()) {
    ProtocolConfig cfg = three_stage(batch_size, epochs, 0, 0, warmup_epochs, dim, dim, kernel);
    cfg.readout.readout_dim.reset();
    return cfg;
  }
};

/// Learning rate at optimization step `step` of a stage: linear ramp from 0
/// to peak over the warmup steps, then either constant peak or
/// peak * (1 + cos(pi * t / T)) / 2 where t counts steps since warmup and
/// T = (annealing steps - 1), so the last step lands exactly on zero.
inline double lr_at(const StageConfig& stage, std::size_t step, std::size_t steps_per_epoch) {
  const std::size_t warm = stage.warmup_epochs * steps_per_epoch;
  const std::size_t total = stage.epochs * steps_per_epoch;
  if (step < warm) return stage.peak_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (!stage.anneal) return stage.peak_lr;
  const std::size_t span = total > warm ? total - warm : 0;
  if (span <= 1) return stage.peak_lr;
  const double t = static_cast<double>(step - warm) / static_cast<double>(span - 1);
  return stage.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
struct OptState {
  Gradients<T> momentum;

  static OptState zeros_like(const EncoderParams<T>& p) { return {p.zero_like()}; }
};

/// buffer <- momentum * buffer + g; param <- param - lr * buffer.
/// Frozen layers are skipped entirely.
template <typename T>
void sgd_momentum_step(EncoderParams<T>& p, const Gradients<T>& g, OptState<T>& o, double lr, double momentum) {
  if (g.size() != p.params.size() || o.momentum.size() != p.params.size())
    throw ShapeError("sgd_momentum_step: gradient / buffer layer count does not match parameters");
  const T m = static_cast<T>(momentum), step = static_cast<T>(lr);
  for (std::size_t l = 0; l < p.params.size(); ++l) {
    auto& lp = p.params[l];
    auto& buf = o.momentum[l];
    if (g[l].weight.size() != lp.weight.size() || g[l].bias.size() != lp.bias.size() ||
        buf.weight.size() != lp.weight.size() || buf.bias.size() != lp.bias.size())
      throw ShapeError("sgd_momentum_step: shape mismatch at layer " + std::to_string(l));
    if (p.frozen[l]) continue;
    auto update = [&](std::vector<T>& w, std::vector<T>& b, const std::vector<T>& gr) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        b[i] = m * b[i] + gr[i];
        w[i] -= step * b[i];
      }
    };
    update(lp.weight, buf.weight, g[l].weight);
    update(lp.bias, buf.bias, g[l].bias);
  }
}

struct EpochRecord {
  std::size_t epoch;
  double mean_loss;
  double lr;  // learning rate of the epoch's last step
};

struct TrainOptions {
  AugmentPolicy policy{};
  ExecOptions exec{};
  std::optional<std::vector<std::size_t>> indices;  // images to train on; default: all
  std::function<void(const std::string& stage, const EpochRecord&)> on_epoch;
};

template <typename T>
struct StageResult {
  EncoderParams<T> params;
  std::vector<EpochRecord> history;
};

/// Assembles the 2b x (C*H*W) batch of augmented views; rows 2m / 2m+1 are the
/// views of image `batch[m]`, drawn from aug_root.child(hash(epoch, index)).
template <typename T>
Matrix<T> augmented_batch(const LabeledDataset& ds, const std::vector<std::size_t>& batch, const AugmentPolicy& policy,
                          const RandomStream& aug_root, std::uint64_t epoch, const ExecOptions& exec) {
  const std::size_t dim = ds.images.front().pixels.size();
  Matrix<T> x(2 * batch.size(), dim);
  parallel_for(batch.size(), exec.threads, [&](std::size_t m) {
    const std::size_t idx = batch[m];
    const auto views = augment_pair<T>(ds.images[idx], policy, aug_root.child(hash_combine(epoch, idx)));
    std::copy(views.a.begin(), views.a.end(), x.row(2 * m).begin());
    std::copy(views.b.begin(), views.b.end(), x.row(2 * m + 1).begin());
  });
  return x;
}

/// Mean InfoNCE loss and its gradient; the loss side always runs in double.
template <typename T>
std::pair<double, Matrix<T>> batch_loss_and_grad(const Matrix<T>& z, const KernelSpec& kernel) {
  const auto lg = infonce_loss_and_grad(PairedEmbedding<double>(z.template cast<double>()), kernel);
  return {lg.loss, lg.grad.template cast<T>()};
}

/// One training stage: per epoch, deterministic batches, two augmented views
/// per image, forward, InfoNCE loss and gradient, backward and an SGD step with
/// the scheduled learning rate. Momentum buffers start at zero.
template <typename T>
StageResult<T> train_stage(const LabeledDataset& ds, EncoderParams<T> params, const StageConfig& stage,
                           std::size_t batch_size, double momentum, const RandomStream& rng,
                           const TrainOptions& opts = {}) {
  stage.validate();
  opts.policy.validate();
  if (ds.size() == 0) throw ValidationError("train_stage: dataset is empty");
  if (stage.readout_dim && *stage.readout_dim != params.readout_dim())
    throw ShapeError("train_stage: stage '" + stage.name + "' expects readout dim " +
                     std::to_string(*stage.readout_dim) + ", parameters have " + std::to_string(params.readout_dim()));
  params = set_freeze(std::move(params), stage.freeze.resolve(params.layers.size()));

  StageResult<T> result{std::move(params), {}};
  if (stage.epochs == 0) return result;

  const std::vector<std::size_t> pool = opts.indices ? *opts.indices : ds.all_indices();
  if (batch_size > pool.size())
    throw ValidationError("train_stage: batch size " + std::to_string(batch_size) + " exceeds the " +
                          std::to_string(pool.size()) + " training images");
  const std::size_t steps_per_epoch = pool.size() / batch_size;
  const std::uint64_t batch_seed = rng.child(0x51).next();
  const RandomStream aug_root = rng.child(0xA6);
  OptState<T> opt = OptState<T>::zeros_like(result.params);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < stage.epochs; ++epoch) {
    double loss_sum = 0.0, lr = 0.0;
    for (const auto& positions : epoch_batches(pool.size(), batch_size, batch_seed, epoch)) {
      std::vector<std::size_t> batch(positions.size());
      for (std::size_t k = 0; k < positions.size(); ++k) batch[k] = pool[positions[k]];
      const Matrix<T> x = augmented_batch<T>(ds, batch, opts.policy, aug_root, epoch, opts.exec);
      auto fw = forward(x, result.params, opts.exec);
      auto [loss, dz] = batch_loss_and_grad(fw.z, stage.kernel);
      if (!std::isfinite(loss))
        throw ValidationError("train_stage: loss became non-finite in stage '" + stage.name + "' epoch " +
                              std::to_string(epoch));
      const auto grads = backward(fw.cache, dz, result.params, opts.exec);
      lr = lr_at(stage, step++, steps_per_epoch);
      sgd_momentum_step(result.params, grads, opt, lr, momentum);
      loss_sum += loss;
    }
    result.history.push_back({epoch, loss_sum / static_cast<double>(steps_per_epoch), lr});
    if (opts.on_epoch) opts.on_epoch(stage.name, result.history.back());
  }
  return result;
}

struct StageReport {
  std::string name;
  std::size_t first_epoch;  // global epoch index at which the stage starts
  std::vector<EpochRecord> history;
};

struct ProtocolReport {
  std::vector<StageReport> stages;

  double final_loss() const {
    for (auto it = stages.rbegin(); it != stages.rend(); ++it)
      if (!it->history.empty()) return it->history.back().mean_loss;
    return std::nan("");
  }
};

template <typename T>
struct ProtocolResult {
  EncoderParams<T> params;
  ProtocolReport report;
};

/// Full three-stage run on the desk-scale architecture:
/// 1. train at the pretrain readout dim with the pretrain kernel,
/// 2. re-initialize the readout (if the readout stage sets a dim) and fit it
///    with all other layers frozen,
/// 3. fine-tune every layer.
/// `on_stage_end(stage_number, params)` fires after each stage.
template <typename T>
ProtocolResult<T> run_protocol(
    const LabeledDataset& ds, const ProtocolConfig& cfg, const RandomStream& rng, const TrainOptions& opts = {},
    const std::function<void(int, const StageConfig&, const EncoderParams<T>&)>& on_stage_end = {}) {
  cfg.validate();
  if (ds.size() == 0) throw ValidationError("run_protocol: dataset is empty");
  const TensorShape input{3, ds.images.front().height, ds.images.front().width};
  RandomStream init_rng = rng.child(100);
  EncoderParams<T> params = make_encoder<T>(desk_architecture(input, *cfg.pretrain.readout_dim), init_rng);

  ProtocolReport report;
  std::size_t epoch_offset = 0;
  const StageConfig* stages[3] = {&cfg.pretrain, &cfg.readout, &cfg.finetune};
  for (int s = 0; s < 3; ++s) {
    StageConfig stage = *stages[s];
    if (s == 1 && stage.readout_dim) {
      RandomStream readout_rng = rng.child(101);
      params = reinit_readout(std::move(params), *stage.readout_dim, readout_rng);
    }
    auto res = train_stage(ds, std::move(params), stage, cfg.batch_size, cfg.momentum,
                           rng.child(static_cast<std::uint64_t>(s + 1)), opts);
    params = std::move(res.params);
    report.stages.push_back({stage.name, epoch_offset, std::move(res.history)});
    epoch_offset += stage.epochs;
    if (on_stage_end) on_stage_end(s + 1, stage, params);
  }
  params = set_freeze(std::move(params), {});
  return {std::move(params), std::move(report)};
}

} // namespace tscn
