#pragma once

// Mini-batch training with Adam (or plain SGD), validation-based model
// selection, checkpoint/resume and per-epoch loss traces.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "subvae/data.hpp"
#include "subvae/model.hpp"

namespace subvae {

enum class OptimizerKind { adam, sgd };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

struct TrainConfig {
  double learning_rate = 1e-3;
  Index epochs = 60;
  Index batch_size = 32;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  Index checkpoint_every = 10;  // epochs; 0 writes only the final checkpoint
  bool record_wall_clock = false;  // seconds column of trace.csv, otherwise 0

  void validate() const;
};

/// First and second moments per parameter, in `parameters()` order.
struct OptimizerState {
  std::int64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

/// One bias-corrected Adam update. Parameters without a gradient are treated
/// as having a zero gradient.
void adam_step(std::span<Parameter<float>> params, OptimizerState& state, const TrainConfig& cfg);
void sgd_step(std::span<Parameter<float>> params, const TrainConfig& cfg);
void optimizer_step(std::span<Parameter<float>> params, OptimizerState& state,
                    const TrainConfig& cfg);

struct EpochRecord {
  Index epoch = 0;  // 1-based
  LossBreakdown train;
  LossBreakdown val;
  double seconds = 0;
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;
  Index best_epoch = 0;

  /// trace.csv: epoch,recon,kl,classification,total,val_total,seconds
  std::string csv(bool wall_clock) const;
};

/// Shuffles `indices` with a stream derived from (seed, epoch), runs one pass
/// of optimizer steps and returns the unweighted mean of the batch losses.
/// A trailing batch of one record is dropped.
LossBreakdown train_epoch(ModelBundle<float>& bundle, const Dataset& dataset,
                          std::span<const std::size_t> indices, const TrainConfig& cfg,
                          Index epoch, OptimizerState& state,
                          std::vector<LossBreakdown>* batch_losses = nullptr);

/// Eval-mode, no-grad mean loss over `indices` (weighted by batch size) with
/// a fixed noise stream, so repeated calls on the same bundle agree.
LossBreakdown evaluate_loss(ModelBundle<float>& bundle, const Dataset& dataset,
                            std::span<const std::size_t> indices, const TrainConfig& cfg);

struct FitOptions {
  /// Receives checkpoint/, best/, trace.csv and timing.csv when set.
  std::optional<std::filesystem::path> out_dir;
  /// Continue from out_dir/checkpoint if present.
  bool resume = false;
  /// Set the decoder output bias from the training images before epoch 1.
  bool init_output_bias = true;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
  ModelBundle<float> bundle;  // the epoch with the lowest validation total
  TrainTrace trace;
};

FitResult fit(ModelBundle<float> bundle, const Dataset& dataset, const TrainConfig& cfg,
              const FitOptions& options = {});

}  // namespace subvae
