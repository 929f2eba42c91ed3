#include "stlkit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace stlkit {

const char* train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::stl: return "stl";
    case TrainMode::cls_only: return "cls-only";
    case TrainMode::loc_only: return "loc-only";
  }
  return "?";
}

TrainMode train_mode_from_name(const std::string& name) {
  if (name == "stl") return TrainMode::stl;
  if (name == "cls-only") return TrainMode::cls_only;
  if (name == "loc-only") return TrainMode::loc_only;
  throw ConfigError("unknown train mode '" + name +
                    "' (expected stl, cls-only or loc-only)");
}

double lr_at(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw InputError("lr_at: epoch must be >= 0");
  const int halvings = cfg.lr_halving_period > 0 ? epoch / cfg.lr_halving_period : 0;
  return cfg.base_lr * std::pow(2.0, -halvings);
}

double effective_alpha(const TrainConfig& cfg, int epoch) {
  switch (cfg.mode) {
    case TrainMode::cls_only: return 0.0;
    case TrainMode::loc_only: return 1.0;
    case TrainMode::stl: return alpha_at(cfg.alpha_schedule, epoch);
  }
  return 0.0;
}

void write_train_log_csv(const std::string& path,
                         const std::vector<TrainLogRecord>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write training log: " + path);
  out.precision(10);
  out << "epoch,alpha,lr,loss_total,loss_cls,loss_loc,train_acc,val_acc_cls,"
         "val_acc_loc\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << r.alpha << ',' << r.lr << ',' << r.loss_total
        << ',' << r.loss_cls << ',' << r.loss_loc << ',' << r.train_acc << ','
        << r.val_acc_cls << ',' << r.val_acc_loc << '\n';
  }
}

SplitResult split_dataset(const std::vector<int>& labels, double ratio, Rng& rng) {
  if (labels.empty()) throw InputError("split: empty dataset");
  if (ratio <= 0.0 || ratio >= 1.0) {
    throw InputError("split: ratio must lie in (0,1)");
  }
  int max_label = 0;
  for (int l : labels) max_label = std::max(max_label, l);

  SplitResult res;
  for (int cls = 0; cls <= max_label; ++cls) {
    std::vector<int> group;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) group.push_back(static_cast<int>(i));
    }
    if (group.empty()) continue;
    if (group.size() < 2) {
      throw InputError("split: class " + std::to_string(cls) +
                       " has fewer than 2 samples");
    }
    rng.shuffle(group.begin(), group.end());
    auto n_train = static_cast<std::size_t>(
        std::llround(ratio * static_cast<double>(group.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, group.size() - 1);
    res.train_ids.insert(res.train_ids.end(), group.begin(),
                         group.begin() + n_train);
    res.val_ids.insert(res.val_ids.end(), group.begin() + n_train, group.end());
  }
  return res;
}

void sgd_step(ModelParams<float>& params, double lr, double momentum,
              double weight_decay) {
  const float lr_f = static_cast<float>(lr);
  const float mom_f = static_cast<float>(momentum);
  const float wd_f = static_cast<float>(weight_decay);
  for (auto& p : params.tensors) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      if (!std::isfinite(p.grad[i])) {
        throw InternalError("non-finite gradient in parameter " + p.name);
      }
      const float v = mom_f * p.momentum[i] -
                      lr_f * (p.grad[i] + wd_f * p.value[i]);
      p.momentum[i] = v;
      p.value[i] += v;
    }
  }
}

namespace {

void make_batch(const Dataset& dataset, const std::vector<int>& ids,
                std::size_t begin, int count, int num_classes, Tensor4f& batch,
                Tensor4f& targets) {
  const auto& first = dataset.samples[ids[begin]];
  batch = Tensor4f(count, 1, first.h, first.w);
  targets = Tensor4f(count, num_classes, 1, 1);
  for (int s = 0; s < count; ++s) {
    const auto& sample = dataset.samples[ids[begin + s]];
    std::copy(sample.pixels.begin(), sample.pixels.end(),
              batch.data() + batch.sample_offset(s));
    targets(s, sample.label, 0, 0) = 1.0f;
  }
}

int argmax_row(const Tensor4f& probs, int s) {
  int best = 0;
  for (int j = 1; j < probs.c(); ++j) {
    if (probs(s, j, 0, 0) > probs(s, best, 0, 0)) best = j;
  }
  return best;
}

struct ValAccuracy {
  double cls = std::numeric_limits<double>::quiet_NaN();
  double loc = std::numeric_limits<double>::quiet_NaN();
};

ValAccuracy validation_accuracy(const NetworkConfig& config,
                                const ModelPlan& plan,
                                const ModelParams<float>& params,
                                const Dataset& dataset,
                                const std::vector<int>& ids, int batch_size) {
  std::size_t correct_cls = 0, correct_loc = 0;
  for (std::size_t begin = 0; begin < ids.size(); begin += batch_size) {
    const int count =
        static_cast<int>(std::min<std::size_t>(batch_size, ids.size() - begin));
    Tensor4f batch, targets;
    make_batch(dataset, ids, begin, count, config.num_classes, batch, targets);
    auto fwd = model_forward(config, plan, params, batch, Mode::eval);
    for (int s = 0; s < count; ++s) {
      const int label = dataset.samples[ids[begin + s]].label;
      if (config.has_classifier() && argmax_row(fwd.y_cls, s) == label) {
        ++correct_cls;
      }
      if (config.has_localizer() && argmax_row(fwd.y_loc, s) == label) {
        ++correct_loc;
      }
    }
  }
  ValAccuracy acc;
  const double n = static_cast<double>(ids.size());
  if (config.has_classifier()) acc.cls = static_cast<double>(correct_cls) / n;
  if (config.has_localizer()) acc.loc = static_cast<double>(correct_loc) / n;
  return acc;
}

// Model selection tracks the head currently being optimized: the classifier
// before the alpha switch, the localizer after it.
double selection_metric(const TrainConfig& cfg, int epoch, const ValAccuracy& acc) {
  switch (cfg.mode) {
    case TrainMode::cls_only: return acc.cls;
    case TrainMode::loc_only: return acc.loc;
    case TrainMode::stl:
      break;
  }
  const bool before_switch = epoch < cfg.alpha_schedule.switch_epoch;
  const double primary = before_switch ? acc.cls : acc.loc;
  if (std::isnan(primary)) return before_switch ? acc.loc : acc.cls;
  return primary;
}

}  // namespace

TrainResult train(const NetworkConfig& net_config, const TrainConfig& cfg,
                  const Dataset& dataset) {
  if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (cfg.epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (dataset.samples.empty()) throw InputError("train: empty dataset");
  if (dataset.meta.canvas_h != net_config.input_h ||
      dataset.meta.canvas_w != net_config.input_w) {
    throw ConfigError("train: dataset canvas does not match network input size");
  }

  const ModelPlan plan = plan_model(net_config);
  ModelParams<float> params = init_params<float>(net_config, cfg.seed, cfg.init);
  DropoutStreams dropout = make_dropout_streams(net_config, cfg.seed);
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng split_rng(derive_seed(cfg.seed, "split"));

  std::vector<int> labels(dataset.samples.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = dataset.samples[i].label;
  }
  SplitResult split = split_dataset(labels, cfg.split_ratio, split_rng);

  auto snapshot_rngs = [&]() {
    std::vector<RngStateEntry> states;
    states.push_back({"shuffle", shuffle_rng.state()});
    for (std::size_t i = 0; i < dropout.streams.size(); ++i) {
      states.push_back({dropout.labels[i], dropout.streams[i].state()});
    }
    return states;
  };

  TrainResult result;
  double best_metric = -std::numeric_limits<double>::infinity();
  if (cfg.epochs == 0) {
    result.best = make_checkpoint(net_config, params, 0,
                                  std::numeric_limits<double>::quiet_NaN(),
                                  snapshot_rngs());
    result.final_params = std::move(params);
    return result;
  }

  // Fallback for divergence before any epoch completes.
  Checkpoint last_good = make_checkpoint(
      net_config, params, 0, std::numeric_limits<double>::quiet_NaN(),
      snapshot_rngs());

  auto fail = [&](const std::string& message) {
    result.diverged = true;
    result.divergence_message = message;
    if (result.best_epoch < 0) result.best = std::move(last_good);
    result.final_params = std::move(params);
    return std::move(result);
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double alpha = effective_alpha(cfg, epoch);
    const double lr = lr_at(cfg, epoch);
    shuffle_rng.shuffle(split.train_ids.begin(), split.train_ids.end());

    double sum_total = 0.0, sum_cls = 0.0, sum_loc = 0.0;
    std::size_t seen = 0, train_correct = 0;
    for (std::size_t begin = 0; begin < split.train_ids.size();
         begin += cfg.batch_size) {
      const int count = static_cast<int>(std::min<std::size_t>(
          cfg.batch_size, split.train_ids.size() - begin));
      Tensor4f batch, targets;
      make_batch(dataset, split.train_ids, begin, count, net_config.num_classes,
                 batch, targets);
      auto fwd = model_forward(net_config, plan, params, batch, Mode::train,
                               &dropout);
      const StlLossResult loss = stl_loss(fwd.y_cls, fwd.y_loc, targets, alpha);
      if (!std::isfinite(loss.total)) {
        return fail("non-finite loss at epoch " + std::to_string(epoch));
      }
      sum_total += loss.total * count;
      sum_cls += loss.cls * count;
      sum_loc += loss.loc * count;
      seen += count;
      const Tensor4f& acc_head = net_config.has_classifier() ? fwd.y_cls : fwd.y_loc;
      for (int s = 0; s < count; ++s) {
        const int label = dataset.samples[split.train_ids[begin + s]].label;
        if (argmax_row(acc_head, s) == label) ++train_correct;
      }
      model_backward(net_config, plan, params, fwd, targets, alpha);
      try {
        sgd_step(params, lr, cfg.momentum, cfg.weight_decay);
      } catch (const InternalError& e) {
        return fail(std::string(e.what()) + " at epoch " + std::to_string(epoch));
      }
    }

    const ValAccuracy val = validation_accuracy(net_config, plan, params,
                                                dataset, split.val_ids,
                                                cfg.batch_size);
    TrainLogRecord rec;
    rec.epoch = epoch;
    rec.alpha = alpha;
    rec.lr = lr;
    rec.loss_total = sum_total / seen;
    rec.loss_cls = sum_cls / seen;
    rec.loss_loc = sum_loc / seen;
    rec.train_acc = static_cast<double>(train_correct) / seen;
    rec.val_acc_cls = val.cls;
    rec.val_acc_loc = val.loc;
    result.log.push_back(rec);

    const double metric = selection_metric(cfg, epoch, val);
    if (!std::isnan(metric) && metric > best_metric) {
      best_metric = metric;
      result.best_epoch = epoch;
      result.best = make_checkpoint(net_config, params,
                                    static_cast<std::uint32_t>(epoch), metric,
                                    snapshot_rngs());
    }
  }

  if (result.best_epoch < 0) result.best = std::move(last_good);
  result.final_params = std::move(params);
  return result;
}

}  // namespace stlkit
