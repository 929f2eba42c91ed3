#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stlkit/checkpoint.hpp"
#include "stlkit/data.hpp"
#include "stlkit/model.hpp"

namespace stlkit {

enum class TrainMode { stl, cls_only, loc_only };

const char* train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& name);

struct TrainConfig {
  double base_lr = 0.01;
  int lr_halving_period = 30;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 64;
  int epochs = 90;
  AlphaSchedule alpha_schedule{};
  double split_ratio = 0.8;
  std::uint64_t seed = 0;
  bool deterministic = true;
  TrainMode mode = TrainMode::stl;
  // Default: zero-mean Gaussian, std 0.01. Desk-scale benchmark runs use
  // the fan-in-scaled policy instead; at the 0.01 scale the logit signal
  // starts around 1e-5 and needs far more steps than a desk budget allows.
  WeightInit init{};
};

// lr(epoch) = base * 2^(-floor(epoch / period)).
double lr_at(const TrainConfig& cfg, int epoch);

// The schedule value, with cls-only pinned to 0 and loc-only pinned to 1.
double effective_alpha(const TrainConfig& cfg, int epoch);

struct TrainLogRecord {
  int epoch = 0;
  double alpha = 0.0;
  double lr = 0.0;
  double loss_total = 0.0, loss_cls = 0.0, loss_loc = 0.0;
  double train_acc = 0.0;
  double val_acc_cls = 0.0, val_acc_loc = 0.0;
};

void write_train_log_csv(const std::string& path,
                         const std::vector<TrainLogRecord>& log);

struct SplitResult {
  std::vector<int> train_ids, val_ids;
};

// Seeded, stratified per class: each class contributes round(ratio * count)
// training samples (clamped so both sides stay nonempty).
SplitResult split_dataset(const std::vector<int>& labels, double ratio, Rng& rng);

// v <- momentum * v - lr * (g + weight_decay * w); w <- w + v. The decay
// applies to weights and biases alike. A non-finite gradient aborts with a
// diagnostic naming the parameter.
void sgd_step(ModelParams<float>& params, double lr, double momentum,
              double weight_decay);

struct TrainResult {
  Checkpoint best;
  std::vector<TrainLogRecord> log;
  ModelParams<float> final_params;
  int best_epoch = -1;
  bool diverged = false;
  std::string divergence_message;
};

// Minibatch SGD over shuffled epochs with an 80/20 stratified split; keeps
// the checkpoint with the best validation accuracy (classifier head before
// the alpha switch, localizer head after).
TrainResult train(const NetworkConfig& net_config, const TrainConfig& cfg,
                  const Dataset& dataset);

}  // namespace stlkit
