#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stlkit/config.hpp"
#include "stlkit/layers.hpp"
#include "stlkit/rng.hpp"
#include "stlkit/tensor.hpp"

namespace stlkit {

template <typename T>
struct ParamTensor {
  std::string name;
  Tensor4<T> value;
  Tensor4<T> grad;
  Tensor4<T> momentum;
};

template <typename T>
struct ModelParams {
  std::vector<ParamTensor<T>> tensors;

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (tensors[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  void zero_grads() {
    for (auto& p : tensors) p.grad.fill(T{});
  }

  std::size_t element_count() const {
    std::size_t total = 0;
    for (const auto& p : tensors) total += p.value.size();
    return total;
  }
};

struct PlannedLayer {
  LayerSpec spec;
  std::string label;   // e.g. "trunk.conv0"
  int w_idx = -1;      // index into ModelParams.tensors
  int b_idx = -1;
  Dims4 in_dims;       // with n == 1
  Dims4 out_dims;
};

// Static shape inference over the three sections. Validates wiring and
// registers one (value, grad, momentum) triple per parameterized layer.
struct ModelPlan {
  std::vector<PlannedLayer> trunk, cls, loc;
  std::vector<std::string> param_names;
  std::vector<Dims4> param_dims;
  Dims4 trunk_out;  // n == 1
};

inline ModelPlan plan_model(const NetworkConfig& config) {
  validate_config(config);
  ModelPlan plan;
  auto add_param = [&](const std::string& name, Dims4 dims) {
    plan.param_names.push_back(name);
    plan.param_dims.push_back(dims);
    return static_cast<int>(plan.param_names.size()) - 1;
  };

  auto run_section = [&](const std::vector<LayerSpec>& specs,
                         const std::string& section, Dims4 dims,
                         std::vector<PlannedLayer>& out) {
    int conv_i = 0, fc_i = 0, drop_i = 0;
    for (const auto& spec : specs) {
      PlannedLayer layer;
      layer.spec = spec;
      layer.in_dims = dims;
      switch (spec.kind) {
        case LayerKind::conv:
        case LayerKind::conv1x1: {
          const int k = spec.kind == LayerKind::conv1x1 ? 1 : spec.kernel;
          const int stride = spec.kind == LayerKind::conv1x1 ? 1 : spec.stride;
          const int pad = spec.kind == LayerKind::conv1x1 ? 0 : spec.pad;
          const std::string base =
              spec.kind == LayerKind::conv1x1
                  ? section + ".conv1x1"
                  : section + ".conv" + std::to_string(conv_i++);
          layer.label = base;
          layer.w_idx = add_param(base + ".w", {spec.channels, dims.c, k, k});
          layer.b_idx = add_param(base + ".b", {1, 1, 1, spec.channels});
          const int oh = nn::conv_out_dim(dims.h, k, stride, pad);
          const int ow = nn::conv_out_dim(dims.w, k, stride, pad);
          if (oh < 1 || ow < 1) {
            throw ConfigError("layer " + base + ": output collapses for input " +
                              dims.str());
          }
          dims = {1, spec.channels, oh, ow};
          break;
        }
        case LayerKind::fully_connected: {
          const std::string base = section + ".fc" + std::to_string(fc_i++);
          layer.label = base;
          const int fan_in = dims.c * dims.h * dims.w;
          layer.w_idx = add_param(base + ".w", {1, 1, spec.channels, fan_in});
          layer.b_idx = add_param(base + ".b", {1, 1, 1, spec.channels});
          dims = {1, spec.channels, 1, 1};
          break;
        }
        case LayerKind::maxpool: {
          layer.label = section + ".maxpool";
          const int oh = nn::conv_out_dim(dims.h, spec.kernel, spec.stride, 0);
          const int ow = nn::conv_out_dim(dims.w, spec.kernel, spec.stride, 0);
          if (oh < 1 || ow < 1) {
            throw ConfigError("layer " + layer.label +
                              ": window does not fit input " + dims.str());
          }
          dims = {1, dims.c, oh, ow};
          break;
        }
        case LayerKind::dropout:
          layer.label = section + ".dropout" + std::to_string(drop_i++);
          break;
        case LayerKind::relu:
          layer.label = section + ".relu";
          break;
        case LayerKind::global_max_pool:
        case LayerKind::global_avg_pool:
          layer.label = section + ".global_pool";
          dims = {1, dims.c, 1, 1};
          break;
        case LayerKind::softmax:
          layer.label = section + ".softmax";
          break;
      }
      layer.out_dims = dims;
      out.push_back(std::move(layer));
    }
    return dims;
  };

  Dims4 input{1, config.input_channels, config.input_h, config.input_w};
  plan.trunk_out = run_section(config.trunk, "trunk", input, plan.trunk);
  if (config.has_classifier()) {
    run_section(config.classifier_head, "classifier", plan.trunk_out, plan.cls);
  }
  if (config.has_localizer()) {
    run_section(config.localizer_head, "localizer", plan.trunk_out, plan.loc);
  }
  return plan;
}

// Weight initialization. Training uses a zero-mean Gaussian with std 0.01
// and zero biases; the gradient-check harness swaps in a 1/sqrt(fan_in)
// scale so activations are O(1).
struct WeightInit {
  double gaussian_std = 0.01;
  bool fan_in_scaled = false;
};

template <typename T>
ModelParams<T> init_params(const NetworkConfig& config, std::uint64_t seed,
                           WeightInit wi = {}) {
  const ModelPlan plan = plan_model(config);
  ModelParams<T> params;
  params.tensors.reserve(plan.param_names.size());
  for (std::size_t i = 0; i < plan.param_names.size(); ++i) {
    ParamTensor<T> p;
    p.name = plan.param_names[i];
    p.value = Tensor4<T>(plan.param_dims[i]);
    p.grad = Tensor4<T>(plan.param_dims[i]);
    p.momentum = Tensor4<T>(plan.param_dims[i]);
    const bool is_bias = p.name.size() >= 2 && p.name.ends_with(".b");
    if (!is_bias) {
      // Every tensor gets its own stream derived from its name, so shared
      // sub-networks initialize identically across configs.
      Rng rng(derive_seed(seed, "init:" + p.name));
      double std_dev = wi.gaussian_std;
      if (wi.fan_in_scaled) {
        const auto& d = plan.param_dims[i];
        const std::size_t fan_in = (d.n > 1)
                                       ? static_cast<std::size_t>(d.c) * d.h * d.w
                                       : static_cast<std::size_t>(d.w);
        std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
      }
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        p.value[j] = static_cast<T>(rng.next_gaussian() * std_dev);
      }
    }
    params.tensors.push_back(std::move(p));
  }
  return params;
}

enum class Mode { train, eval };

// One RNG stream per dropout layer, derived from the layer label so the
// same layer consumes the same stream in any config that contains it.
struct DropoutStreams {
  std::vector<Rng> streams;
  std::vector<std::string> labels;
};

inline DropoutStreams make_dropout_streams(const NetworkConfig& config,
                                           std::uint64_t seed) {
  const ModelPlan plan = plan_model(config);
  DropoutStreams ds;
  for (const auto* section : {&plan.trunk, &plan.cls, &plan.loc}) {
    for (const auto& layer : *section) {
      if (layer.spec.kind == LayerKind::dropout) {
        ds.labels.push_back(layer.label);
        ds.streams.emplace_back(derive_seed(seed, "dropout:" + layer.label));
      }
    }
  }
  return ds;
}

template <typename T>
struct LayerCache {
  Tensor4<T> input;
  std::vector<T> col;
  std::vector<std::int32_t> argmax;
  Tensor4<T> dropout_mask;
};

template <typename T>
struct ForwardResult {
  Tensor4<T> trunk_out;
  Tensor4<T> score_maps;              // conv1x1 output, before global pooling
  Tensor4<T> cls_logits, loc_logits;  // (n, K, 1, 1)
  Tensor4<T> y_cls, y_loc;            // softmax probabilities
  std::vector<LayerCache<T>> trunk_cache, cls_cache, loc_cache;
  Mode mode = Mode::eval;
};

namespace detail {

template <typename T>
Tensor4<T> run_section(const std::vector<PlannedLayer>& layers,
                       const ModelParams<T>& params, Tensor4<T> input,
                       Mode mode, std::vector<LayerCache<T>>& caches,
                       DropoutStreams* dropout, std::size_t& dropout_cursor,
                       Tensor4<T>* score_maps_out) {
  caches.clear();
  caches.resize(layers.size());
  Tensor4<T> cur = std::move(input);
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& layer = layers[li];
    LayerCache<T>& cache = caches[li];
    Tensor4<T> out;
    try {
      switch (layer.spec.kind) {
        case LayerKind::conv:
          out = nn::conv2d_forward(cur, params.tensors[layer.w_idx].value,
                                   params.tensors[layer.b_idx].value,
                                   layer.spec.stride, layer.spec.pad,
                                   mode == Mode::train ? &cache.col : nullptr);
          break;
        case LayerKind::conv1x1:
          out = nn::conv2d_forward(cur, params.tensors[layer.w_idx].value,
                                   params.tensors[layer.b_idx].value, 1, 0,
                                   mode == Mode::train ? &cache.col : nullptr);
          if (score_maps_out) *score_maps_out = out;
          break;
        case LayerKind::relu:
          out = nn::relu_forward(cur);
          break;
        case LayerKind::maxpool:
          out = nn::maxpool_forward(cur, layer.spec.kernel, layer.spec.stride,
                                    cache.argmax);
          break;
        case LayerKind::fully_connected:
          out = nn::fc_forward(cur, params.tensors[layer.w_idx].value,
                               params.tensors[layer.b_idx].value);
          break;
        case LayerKind::dropout: {
          if (mode == Mode::train && layer.spec.rate > 0.0) {
            if (!dropout) {
              throw InternalError("dropout layer " + layer.label +
                                  " needs RNG streams in train mode");
            }
            out = nn::dropout_forward(cur, layer.spec.rate,
                                      dropout->streams[dropout_cursor],
                                      true, &cache.dropout_mask);
          } else {
            out = cur;
          }
          ++dropout_cursor;
          break;
        }
        case LayerKind::global_max_pool:
          out = nn::global_max_pool_forward(cur, cache.argmax);
          break;
        case LayerKind::global_avg_pool:
          out = nn::global_avg_pool_forward(cur);
          break;
        case LayerKind::softmax:
          out = cur;  // applied by the caller on the head logits
          break;
      }
    } catch (const ConfigError& e) {
      throw ConfigError("layer " + layer.label + ": " + e.what());
    }
    cache.input = std::move(cur);
    cur = std::move(out);
  }
  return cur;
}

// Backward over one section. Returns the gradient at the section input and
// assigns parameter gradients. If capture_score_map_grad is non-null, the
// gradient flowing into the first conv1x1 layer (i.e. at the score maps)
// is copied there.
template <typename T>
Tensor4<T> section_backward(const std::vector<PlannedLayer>& layers,
                            ModelParams<T>& params,
                            const std::vector<LayerCache<T>>& caches,
                            Tensor4<T> grad, nn::ReluBackwardMode relu_mode,
                            Tensor4<T>* capture_score_map_grad = nullptr,
                            int layer_count = -1) {
  if (layer_count < 0) layer_count = static_cast<int>(layers.size());
  for (int li = layer_count - 1; li >= 0; --li) {
    const auto& layer = layers[li];
    const LayerCache<T>& cache = caches[li];
    switch (layer.spec.kind) {
      case LayerKind::conv:
      case LayerKind::conv1x1: {
        if (layer.spec.kind == LayerKind::conv1x1 && capture_score_map_grad) {
          *capture_score_map_grad = grad;
        }
        const int stride = layer.spec.kind == LayerKind::conv1x1 ? 1 : layer.spec.stride;
        const int pad = layer.spec.kind == LayerKind::conv1x1 ? 0 : layer.spec.pad;
        auto grads = nn::conv2d_backward(
            cache.input, params.tensors[layer.w_idx].value, grad, stride, pad,
            cache.col.empty() ? nullptr : &cache.col);
        params.tensors[layer.w_idx].grad = std::move(grads.gw);
        params.tensors[layer.b_idx].grad = std::move(grads.gb);
        grad = std::move(grads.gx);
        break;
      }
      case LayerKind::relu:
        grad = nn::relu_backward(cache.input, grad, relu_mode);
        break;
      case LayerKind::maxpool:
        grad = nn::maxpool_backward(cache.input.dims(), cache.argmax, grad);
        break;
      case LayerKind::fully_connected: {
        auto grads = nn::fc_backward(cache.input,
                                     params.tensors[layer.w_idx].value, grad);
        params.tensors[layer.w_idx].grad = std::move(grads.gw);
        params.tensors[layer.b_idx].grad = std::move(grads.gb);
        grad = std::move(grads.gx);
        break;
      }
      case LayerKind::dropout:
        if (!cache.dropout_mask.empty()) {
          grad = nn::dropout_backward(grad, cache.dropout_mask, layer.spec.rate);
        }
        break;
      case LayerKind::global_max_pool:
        grad = nn::global_max_pool_backward(cache.input.dims(), cache.argmax, grad);
        break;
      case LayerKind::global_avg_pool:
        grad = nn::global_avg_pool_backward(cache.input.dims(), grad);
        break;
      case LayerKind::softmax:
        break;  // folded into the cross-entropy gradient
    }
  }
  return grad;
}

}  // namespace detail

// Full forward pass. In train mode, dropout layers consume their streams
// and backward caches (im2col patches, argmax, masks) are retained.
template <typename T>
ForwardResult<T> model_forward(const NetworkConfig& config, const ModelPlan& plan,
                               const ModelParams<T>& params,
                               const Tensor4<T>& batch, Mode mode,
                               DropoutStreams* dropout = nullptr) {
  if (batch.c() != config.input_channels || batch.h() != config.input_h ||
      batch.w() != config.input_w) {
    throw ConfigError("input batch " + batch.dims().str() +
                      " does not match configured input (" +
                      std::to_string(config.input_channels) + "," +
                      std::to_string(config.input_h) + "," +
                      std::to_string(config.input_w) + ")");
  }
  ForwardResult<T> res;
  res.mode = mode;
  std::size_t dropout_cursor = 0;
  Tensor4<T> scaled = batch;
  if (config.input_scale != 1.0) {
    const T scale = static_cast<T>(config.input_scale);
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= scale;
  }
  res.trunk_out = detail::run_section(plan.trunk, params, std::move(scaled),
                                      mode, res.trunk_cache, dropout,
                                      dropout_cursor,
                                      static_cast<Tensor4<T>*>(nullptr));
  if (!plan.cls.empty()) {
    res.cls_logits = detail::run_section(plan.cls, params, res.trunk_out, mode,
                                         res.cls_cache, dropout, dropout_cursor,
                                         static_cast<Tensor4<T>*>(nullptr));
    res.y_cls = nn::softmax_probs(res.cls_logits);
  }
  if (!plan.loc.empty()) {
    res.loc_logits = detail::run_section(plan.loc, params, res.trunk_out, mode,
                                         res.loc_cache, dropout, dropout_cursor,
                                         &res.score_maps);
    res.y_loc = nn::softmax_probs(res.loc_logits);
  }
  return res;
}

template <typename T>
ForwardResult<T> model_forward(const NetworkConfig& config,
                               const ModelParams<T>& params,
                               const Tensor4<T>& batch, Mode mode,
                               DropoutStreams* dropout = nullptr) {
  const ModelPlan plan = plan_model(config);
  return model_forward(config, plan, params, batch, mode, dropout);
}

// Weighted loss: total = (1-alpha) * Loss_cls + alpha * Loss_loc, each term
// the minibatch mean cross-entropy of its head.
struct StlLossResult {
  double total = 0.0;
  double cls = 0.0;
  double loc = 0.0;
};

template <typename T>
StlLossResult stl_loss(const Tensor4<T>& y_cls, const Tensor4<T>& y_loc,
                       const Tensor4<T>& targets, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) {
    throw ConfigError("alpha must lie in [0,1], got " + std::to_string(alpha));
  }
  nn::check_one_hot(targets);
  StlLossResult res;
  if (!y_cls.empty()) res.cls = nn::cross_entropy_mean(y_cls, targets);
  if (!y_loc.empty()) res.loc = nn::cross_entropy_mean(y_loc, targets);
  res.total = (1.0 - alpha) * res.cls + alpha * res.loc;
  return res;
}

// Gradient decomposition at the shared trunk output: the two head
// contributions, their gated combination, and the gradient that reached the
// score maps (used to check the pooling-head structure).
template <typename T>
struct BackpropProbe {
  Tensor4<T> delta_cls;
  Tensor4<T> delta_loc;
  Tensor4<T> delta_shared;
  Tensor4<T> delta_score_map;
};

// Backward pass for the weighted loss. Head contributions are weighted by
// (1-alpha) / alpha inside the cross-entropy gradients; a head whose weight
// is exactly zero is skipped entirely, so its contribution is a structural
// zero and the remaining computation matches the single-head network
// bit for bit.
template <typename T>
BackpropProbe<T> model_backward(const NetworkConfig& config,
                                const ModelPlan& plan, ModelParams<T>& params,
                                const ForwardResult<T>& fwd,
                                const Tensor4<T>& targets, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) {
    throw ConfigError("alpha must lie in [0,1], got " + std::to_string(alpha));
  }
  if (fwd.mode != Mode::train) {
    throw InternalError("model_backward: forward cache was built in eval mode");
  }
  nn::check_one_hot(targets);
  params.zero_grads();

  const int n = targets.n();
  const Dims4 trunk_dims = fwd.trunk_out.dims();
  BackpropProbe<T> probe;
  probe.delta_cls = Tensor4<T>(trunk_dims);
  probe.delta_loc = Tensor4<T>(trunk_dims);

  const double cls_weight = 1.0 - alpha;
  if (!plan.cls.empty() && cls_weight > 0.0) {
    if (fwd.cls_logits.n() != n) throw InternalError("stale forward cache");
    Tensor4<T> g(fwd.cls_logits.dims());
    const T scale = static_cast<T>(cls_weight / n);
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = (fwd.y_cls[i] - targets[i]) * scale;
    }
    probe.delta_cls = detail::section_backward(plan.cls, params, fwd.cls_cache,
                                               std::move(g),
                                               config.relu_backward);
  }

  if (!plan.loc.empty() && alpha > 0.0) {
    if (fwd.loc_logits.n() != n) throw InternalError("stale forward cache");
    Tensor4<T> g(fwd.loc_logits.dims());
    const T scale = static_cast<T>(alpha / n);
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = (fwd.y_loc[i] - targets[i]) * scale;
    }
    probe.delta_loc = detail::section_backward(plan.loc, params, fwd.loc_cache,
                                               std::move(g),
                                               config.relu_backward,
                                               &probe.delta_score_map);
  }
  if (probe.delta_score_map.empty() && !fwd.score_maps.empty()) {
    probe.delta_score_map = Tensor4<T>(fwd.score_maps.dims());
  }

  Tensor4<T> combined(trunk_dims);
  for (std::size_t i = 0; i < combined.size(); ++i) {
    combined[i] = probe.delta_cls[i] + probe.delta_loc[i];
  }

  // The shared error: if the trunk ends in a ReLU, its backward gate applies
  // to the combined contribution; otherwise the sum passes through.
  int remaining = static_cast<int>(plan.trunk.size());
  if (!plan.trunk.empty() && plan.trunk.back().spec.kind == LayerKind::relu) {
    combined = nn::relu_backward(fwd.trunk_cache.back().input, combined,
                                 config.relu_backward);
    --remaining;
  }
  probe.delta_shared = combined;
  detail::section_backward(plan.trunk, params, fwd.trunk_cache,
                           std::move(combined), config.relu_backward,
                           static_cast<Tensor4<T>*>(nullptr), remaining);
  return probe;
}

// Piecewise-constant loss weighting: initial_alpha before switch_epoch,
// final_alpha from then on. The ramp mode interpolates linearly up to the
// switch instead (non-default).
struct AlphaSchedule {
  double initial_alpha = 0.1;
  double final_alpha = 0.9;
  int switch_epoch = 60;
  enum class Mode { step, ramp };
  Mode mode = Mode::step;
};

inline double alpha_at(const AlphaSchedule& s, int epoch) {
  if (epoch >= s.switch_epoch) return s.final_alpha;
  if (s.mode == AlphaSchedule::Mode::step) return s.initial_alpha;
  if (s.switch_epoch <= 0) return s.final_alpha;
  const double t = static_cast<double>(epoch) / s.switch_epoch;
  return s.initial_alpha + (s.final_alpha - s.initial_alpha) * t;
}

}  // namespace stlkit
