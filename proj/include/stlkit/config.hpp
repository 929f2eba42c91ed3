#pragma once

#include <string>
#include <vector>

#include "stlkit/layers.hpp"
#include "stlkit/tensor.hpp"

namespace stlkit {

enum class LayerKind {
  conv,
  relu,
  maxpool,
  fully_connected,
  dropout,
  conv1x1,
  global_max_pool,
  global_avg_pool,
  softmax,
};

const char* layer_kind_name(LayerKind k);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int channels = 0;  // conv out-channels, conv1x1 class count, FC hidden nodes
  double rate = 0.0;  // dropout

  static LayerSpec Conv(int kernel, int stride, int pad, int channels) {
    return {LayerKind::conv, kernel, stride, pad, channels, 0.0};
  }
  static LayerSpec Relu() { return {LayerKind::relu}; }
  static LayerSpec MaxPool(int kernel, int stride) {
    return {LayerKind::maxpool, kernel, stride, 0, 0, 0.0};
  }
  static LayerSpec Fc(int hidden) {
    return {LayerKind::fully_connected, 1, 1, 0, hidden, 0.0};
  }
  static LayerSpec Dropout(double rate) {
    return {LayerKind::dropout, 1, 1, 0, 0, rate};
  }
  static LayerSpec Conv1x1(int classes) {
    return {LayerKind::conv1x1, 1, 1, 0, classes, 0.0};
  }
  static LayerSpec GlobalMaxPool() { return {LayerKind::global_max_pool}; }
  static LayerSpec GlobalAvgPool() { return {LayerKind::global_avg_pool}; }
  static LayerSpec Softmax() { return {LayerKind::softmax}; }
};

enum class PoolKind { max, avg };

// Shared trunk plus two heads. The localizer consumes the trunk output
// directly (presets order the trunk so that tensor is ReLU-activated); any
// extra downsampling the classifier needs is part of its own head.
struct NetworkConfig {
  std::string name = "custom";
  std::vector<LayerSpec> trunk;
  std::vector<LayerSpec> classifier_head;  // empty: no classifier head
  std::vector<LayerSpec> localizer_head;   // empty: no localizer head
  int num_classes = 2;
  int input_channels = 1;
  int input_h = 64;
  int input_w = 64;
  // Constant multiplier applied to the input batch ahead of the trunk.
  // Presets use 255 (raw gray-level scale); the 0.01-std Gaussian init only
  // produces usable gradients at that magnitude.
  double input_scale = 1.0;
  nn::ReluBackwardMode relu_backward = nn::ReluBackwardMode::input_gate;

  bool has_classifier() const { return !classifier_head.empty(); }
  bool has_localizer() const { return !localizer_head.empty(); }
  PoolKind localizer_pool() const;
};

// Presets. "desk": 3 conv stages, global stride 8, 8x8 maps at 64x64.
// "paper": 6 conv stages, global stride 32, 15x15 maps at 500x500, H=2048.
// "alexnet-conv": unpadded stride-4 conv stack, receptive field 224,
// 10x10 maps at 512x512 (geometry reference only).
NetworkConfig desk_net_config(PoolKind pool = PoolKind::avg, int num_classes = 2);
NetworkConfig paper_net_config(PoolKind pool = PoolKind::avg, int num_classes = 2);
NetworkConfig alexnet_conv_config(PoolKind pool = PoolKind::max, int num_classes = 2);

// Preset lookup by CLI name: "desk", "paper", "alexnet-conv".
NetworkConfig preset_by_name(const std::string& name, PoolKind pool,
                             int num_classes = 2);

struct Geometry {
  int global_stride = 1;
  int rf_h = 1;
  int rf_w = 1;
};

// Stride and receptive field of the path from input pixels to the score
// maps (trunk + 1x1 conv).
Geometry geometry(const NetworkConfig& config);

// Spatial dims of the score maps for a given input size; throws ConfigError
// if any layer output collapses below 1.
std::pair<int, int> score_map_dims(const NetworkConfig& config, int input_h,
                                   int input_w);

// Plain-text config format: `key value` lines plus [trunk]/[classifier]/
// [localizer] sections with one layer per line (`kind k s p channels`).
std::string config_to_text(const NetworkConfig& config);
NetworkConfig config_from_text(const std::string& text);
NetworkConfig load_config_file(const std::string& path);

// Structural validation (head wiring, channel agreement, positive dims).
void validate_config(const NetworkConfig& config);

}  // namespace stlkit
