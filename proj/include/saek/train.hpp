#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "saek/checkpoint.hpp"
#include "saek/data.hpp"
#include "saek/networks.hpp"

namespace saek {

enum class LossKind { cross_entropy, bce_logits };

const char* to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& s);
/// Cross-entropy for classifiers, BCE-with-logits for segmentation.
LossKind default_loss(const NetworkConfig& config);

struct TrainPlan {
  std::size_t epochs = 1;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  bool shuffle = true;
  LossKind loss_kind = LossKind::cross_entropy;
  /// Write checkpoint_dir/epoch_NNNN.saek every this many epochs (0 = never).
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
  double lr = 1e-4;

  void validate(const NetworkConfig& config) const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  /// Train accuracy, or pixel accuracy for segmentation.
  double accuracy = 0.0;

  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

std::string log_csv_header();
std::string log_csv_line(const EpochLog& e);
std::string log_csv(const std::vector<EpochLog>& log);

struct TrainState {
  ParamStore<float> params;
  AdamState adam;
  /// Completed epochs.
  std::size_t epoch = 0;
};

TrainState initial_state(const NetworkConfig& config, std::uint64_t seed, double lr);
Checkpoint to_checkpoint(const TrainState& state, const NetworkConfig& config);
TrainState state_from_checkpoint(const Checkpoint& ckpt, const NetworkConfig& config);

/// Return false to stop after this epoch.
using EpochCallback = std::function<bool(const EpochLog&, const TrainState&)>;

/// Runs epochs state.epoch + 1 .. plan.epochs. The order of epoch e is a
/// shuffle drawn from derive_seed(plan.seed, e), so a run resumed from a
/// checkpoint replays the same batches. Throws NumericError with the
/// epoch and batch when the loss or a gradient becomes non-finite.
std::vector<EpochLog> fit(const NetworkConfig& config, const Dataset& data, const TrainPlan& plan, TrainState& state,
                          const EpochCallback& on_epoch = {});

/// N x C x H x W batch of the given samples' images.
Tensor stack_images(const Dataset& data, const std::vector<std::size_t>& indices);
/// N x C x H x W one-hot masks.
Tensor one_hot_masks(const Dataset& data, const std::vector<std::size_t>& indices, std::size_t channels);

/// Eval-mode forward without gradients, in chunks of `batch` samples.
/// Returns logits (N x classes) or logit maps (N x C x H x W).
Tensor infer(const NetworkConfig& config, ParamStore<float>& params, const Tensor& images, std::size_t batch = 16);

/// Row-wise argmax of N x C, or channel argmax of N x C x H x W (flattened
/// N*H*W). Ties go to the lowest class.
std::vector<std::size_t> argmax_classes(const Tensor& logits);

}  // namespace saek
