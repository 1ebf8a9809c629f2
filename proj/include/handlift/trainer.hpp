#pragma once

#include "handlift/data.hpp"
#include "handlift/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace handlift {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::size_t epochs = 100;
  double clip_norm = 1.0;
  std::size_t batch_size = 256;
  double flip_prob = 0.5;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  bool augment = true;
  // Evaluate on the held-out set every N epochs (and always on the last one);
  // 0 disables per-epoch evaluation.
  std::size_t eval_every = 1;
  std::vector<std::uint64_t> seeds{0};

  void validate() const;
};

struct AdamWState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamWState for_parameters(const nn::ParameterSet& params);
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mean over the batch of (1/J) sum_j |pred_j - target_j|_1.
ad::Tensor l1_loss(const ad::Tensor& pred, const ad::Tensor& target);

// Decoupled weight decay (parameters flagged `decay` only), then the
// bias-corrected Adam update.
void adamw_step(nn::ParameterSet& params, AdamWState& state, double lr_t, double weight_decay);

// 0.5 lr (1 + cos(pi epoch / (epochs - 1))).
double cosine_lr(std::size_t epoch, const TrainConfig& cfg);

// Rescales all gradients by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the norm before clipping.
double clip_gradients(std::span<const std::span<double>> grads, double max_norm);
double clip_gradients(nn::ParameterSet& params, double max_norm);

PoseSample flip_sample(const PoseSample& s);
PoseSample scale_sample(const PoseSample& s, double factor);
// Flip with probability flip_prob, then one shared scale in [scale_lo, scale_hi].
PoseSample augment(const PoseSample& s, const TrainConfig& cfg, CounterRng& rng);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> eval_mpjpe;
  std::optional<double> eval_auc;
};

struct TrainState {
  AdamWState optimizer;
  std::size_t next_epoch = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  TrainState state;
};

// Runs epochs [state.next_epoch, cfg.epochs). Every random draw comes from
// streams keyed by (seed, epoch), so a resumed run matches an uninterrupted
// one. Throws DivergenceError on a non-finite loss.
TrainResult train(LiftingModel& model, std::span<const PoseSample> train_set, std::span<const PoseSample> eval_set,
                  const TrainConfig& cfg, std::uint64_t seed, std::optional<TrainState> resume = std::nullopt,
                  const std::function<void(const EpochLog&, const TrainState&)>& on_epoch = {});

// header: epoch,lr,train_loss,eval_mpjpe,eval_auc
std::string log_csv(std::span<const EpochLog> log);

// ---------------------------------------------------------------------------
// Checkpoints use the nn parameter file format. Meta keys: "model.<key>" for
// the model config, "epoch" (next epoch to run), "seed", "adam.step".
// Optimizer moments are stored as "adam.m/<param>" and "adam.v/<param>".

struct Checkpoint {
  ModelConfig config;
  std::uint64_t seed = 0;
  TrainState state;
  std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::filesystem::path& path, const LiftingModel& model, const TrainState& state,
                     std::uint64_t seed);

struct LoadedCheckpoint {
  LiftingModel model;
  Checkpoint info;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const SkeletonGraph& skeleton);

}  // namespace handlift
