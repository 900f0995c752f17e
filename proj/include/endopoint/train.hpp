#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "endopoint/losses.hpp"
#include "endopoint/network.hpp"
#include "endopoint/selfsup.hpp"

namespace endopoint {

struct TrainConfig {
  std::size_t iterations = 200000;
  double learning_rate = 1e-5;
  std::size_t batch_size = 2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: only the final state
  HomographyConfig homography;

  void validate() const;
};

struct TrainingSample {
  Tensor image;
  PseudoLabel label;
};

struct LossRecord {
  std::size_t iteration = 0;
  double total = 0, detection = 0, descriptor = 0, specularity = 0;
};

/// Adam moments, one tensor per parameter in (kernel, bias) layer order.
struct AdamState {
  std::size_t step = 0;
  std::vector<Tensor> first, second;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct TrainResult {
  NetworkParams params;
  AdamState optimizer;
  std::vector<LossRecord> history;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t iteration, const std::string& what)
      : std::runtime_error(what), iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Called after `iteration` (1-based count of completed iterations).
using CheckpointFn = std::function<void(
    std::size_t iteration, const NetworkParams&, const AdamState&)>;

/// One optimisation step's worth of gradients, averaged over the batch.
struct BatchGradient {
  std::vector<Tensor> grads;  // same order as AdamState
  LossRecord loss;
};

/// Evaluates the adapted loss on (image, warp(image, h)) pairs and returns
/// parameter gradients. Exposed for gradient checking.
BatchGradient batch_gradient(const NetworkParams& params,
                             std::span<const TrainingSample> batch,
                             std::span<const Homography> warps,
                             const LossConfig& loss);

/// Scalar adapted loss of the same computation, no gradients.
double batch_loss(const NetworkParams& params,
                  std::span<const TrainingSample> batch,
                  std::span<const Homography> warps, const LossConfig& loss);

/// Fine-tunes `initial`: each iteration draws a batch with replacement, warps
/// every image with a fresh random homography, and takes one Adam step on the
/// batch-mean loss. Parameters are kept float-representable. Deterministic in
/// config.seed; throws TrainingError on a non-finite loss.
TrainResult finetune(NetworkParams initial,
                     std::span<const TrainingSample> dataset,
                     const TrainConfig& config, const LossConfig& loss,
                     const CheckpointFn& on_checkpoint = {});

/// Sidecar text for checkpoints: iteration, Adam step, then both moment sets.
void write_optimizer_state(const std::filesystem::path& path,
                           const AdamState& state, std::size_t iteration);
AdamState read_optimizer_state(const std::filesystem::path& path,
                               const NetworkParams& like,
                               std::size_t* iteration = nullptr);

}  // namespace endopoint
