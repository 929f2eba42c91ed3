#include "stlkit/config.hpp"

#include <fstream>
#include <sstream>

namespace stlkit {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::fully_connected: return "fully_connected";
    case LayerKind::dropout: return "dropout";
    case LayerKind::conv1x1: return "conv1x1";
    case LayerKind::global_max_pool: return "global_max_pool";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

PoolKind NetworkConfig::localizer_pool() const {
  for (const auto& spec : localizer_head) {
    if (spec.kind == LayerKind::global_max_pool) return PoolKind::max;
    if (spec.kind == LayerKind::global_avg_pool) return PoolKind::avg;
  }
  throw ConfigError("localizer head has no global pooling layer");
}

namespace {

std::vector<LayerSpec> localizer_layers(PoolKind pool, int num_classes) {
  return {LayerSpec::Conv1x1(num_classes),
          pool == PoolKind::max ? LayerSpec::GlobalMaxPool()
                                : LayerSpec::GlobalAvgPool(),
          LayerSpec::Softmax()};
}

}  // namespace

NetworkConfig desk_net_config(PoolKind pool, int num_classes) {
  NetworkConfig cfg;
  cfg.name = "desk";
  cfg.input_scale = 255.0;
  cfg.num_classes = num_classes;
  cfg.input_channels = 1;
  cfg.input_h = 64;
  cfg.input_w = 64;
  // The last stage runs pool-then-relu so the shared branch tensor is
  // ReLU-activated (equivalent activations: max pooling commutes with relu).
  cfg.trunk = {
      LayerSpec::Conv(3, 1, 1, 8),   LayerSpec::Relu(), LayerSpec::MaxPool(2, 2),
      LayerSpec::Conv(3, 1, 1, 16),  LayerSpec::Relu(), LayerSpec::MaxPool(2, 2),
      LayerSpec::Conv(3, 1, 1, 32),  LayerSpec::MaxPool(2, 2), LayerSpec::Relu(),
  };
  cfg.classifier_head = {
      LayerSpec::Fc(128),  LayerSpec::Relu(), LayerSpec::Dropout(0.5),
      LayerSpec::Fc(128),  LayerSpec::Relu(), LayerSpec::Dropout(0.5),
      LayerSpec::Fc(num_classes), LayerSpec::Softmax(),
  };
  cfg.localizer_head = localizer_layers(pool, num_classes);
  return cfg;
}

NetworkConfig paper_net_config(PoolKind pool, int num_classes) {
  NetworkConfig cfg;
  cfg.name = "paper";
  cfg.input_scale = 255.0;
  cfg.num_classes = num_classes;
  cfg.input_channels = 1;
  cfg.input_h = 500;
  cfg.input_w = 500;
  // Six conv stages, global stride 32; 500x500 inputs give 15x15 score maps
  // (500 -> 250 -> 125 -> 62 -> 31 -> 15). The classifier takes one more
  // 2x max pool before its fully connected stack.
  cfg.trunk = {
      LayerSpec::Conv(7, 2, 3, 96),  LayerSpec::Relu(), LayerSpec::MaxPool(2, 2),
      LayerSpec::Conv(3, 1, 1, 256), LayerSpec::Relu(), LayerSpec::MaxPool(2, 2),
      LayerSpec::Conv(3, 1, 1, 384), LayerSpec::Relu(), LayerSpec::MaxPool(2, 2),
      LayerSpec::Conv(3, 1, 1, 384), LayerSpec::Relu(), LayerSpec::MaxPool(2, 2),
      LayerSpec::Conv(3, 1, 1, 256), LayerSpec::Relu(),
      LayerSpec::Conv(3, 1, 1, 256), LayerSpec::Relu(),
  };
  cfg.classifier_head = {
      LayerSpec::MaxPool(2, 2),
      LayerSpec::Fc(2048), LayerSpec::Relu(), LayerSpec::Dropout(0.5),
      LayerSpec::Fc(2048), LayerSpec::Relu(), LayerSpec::Dropout(0.5),
      LayerSpec::Fc(num_classes), LayerSpec::Softmax(),
  };
  cfg.localizer_head = localizer_layers(pool, num_classes);
  return cfg;
}

NetworkConfig alexnet_conv_config(PoolKind pool, int num_classes) {
  NetworkConfig cfg;
  cfg.name = "alexnet-conv";
  cfg.input_scale = 255.0;
  cfg.num_classes = num_classes;
  cfg.input_channels = 1;
  cfg.input_h = 512;
  cfg.input_w = 512;
  // Unpadded throughout: receptive field 224, global stride 32, so a
  // 512x512 input yields (512-224)/32+1 = 10x10 score maps.
  cfg.trunk = {
      LayerSpec::Conv(8, 4, 0, 96),  LayerSpec::Relu(), LayerSpec::MaxPool(3, 2),
      LayerSpec::Conv(5, 1, 0, 256), LayerSpec::Relu(), LayerSpec::MaxPool(3, 2),
      LayerSpec::Conv(3, 1, 0, 384), LayerSpec::Relu(),
      LayerSpec::Conv(3, 1, 0, 384), LayerSpec::Relu(),
      LayerSpec::Conv(3, 1, 0, 256), LayerSpec::Relu(), LayerSpec::MaxPool(3, 2),
      LayerSpec::Conv(2, 1, 0, 256), LayerSpec::Relu(),
  };
  cfg.classifier_head = {
      LayerSpec::Fc(2048), LayerSpec::Relu(), LayerSpec::Dropout(0.5),
      LayerSpec::Fc(num_classes), LayerSpec::Softmax(),
  };
  cfg.localizer_head = localizer_layers(pool, num_classes);
  return cfg;
}

NetworkConfig preset_by_name(const std::string& name, PoolKind pool,
                             int num_classes) {
  if (name == "desk") return desk_net_config(pool, num_classes);
  if (name == "paper") return paper_net_config(pool, num_classes);
  if (name == "alexnet-conv") return alexnet_conv_config(pool, num_classes);
  throw ConfigError("unknown preset '" + name +
                    "' (expected desk, paper or alexnet-conv)");
}

Geometry geometry(const NetworkConfig& config) {
  Geometry g;
  int jump = 1;
  auto absorb = [&](const LayerSpec& spec) {
    switch (spec.kind) {
      case LayerKind::conv:
      case LayerKind::maxpool:
        g.rf_h += (spec.kernel - 1) * jump;
        g.rf_w += (spec.kernel - 1) * jump;
        jump *= spec.stride;
        break;
      case LayerKind::conv1x1:
      case LayerKind::relu:
        break;
      default:
        throw ConfigError(std::string("geometry: unsupported layer '") +
                          layer_kind_name(spec.kind) +
                          "' on the score-map path");
    }
  };
  for (const auto& spec : config.trunk) absorb(spec);
  for (const auto& spec : config.localizer_head) {
    if (spec.kind == LayerKind::global_max_pool ||
        spec.kind == LayerKind::global_avg_pool ||
        spec.kind == LayerKind::softmax) {
      break;
    }
    absorb(spec);
  }
  g.global_stride = jump;
  return g;
}

std::pair<int, int> score_map_dims(const NetworkConfig& config, int input_h,
                                   int input_w) {
  int h = input_h, w = input_w;
  auto apply = [&](const LayerSpec& spec, const char* where) {
    if (spec.kind == LayerKind::conv || spec.kind == LayerKind::maxpool) {
      h = nn::conv_out_dim(h, spec.kernel, spec.stride, spec.pad);
      w = nn::conv_out_dim(w, spec.kernel, spec.stride, spec.pad);
      if (h < 1 || w < 1) {
        throw ConfigError(std::string("config '") + config.name + "': " +
                          where + " output collapses to " + std::to_string(h) +
                          "x" + std::to_string(w));
      }
    }
  };
  for (const auto& spec : config.trunk) apply(spec, "trunk");
  return {h, w};
}

void validate_config(const NetworkConfig& config) {
  if (config.num_classes < 2) {
    throw ConfigError("config: num_classes must be >= 2");
  }
  if (config.trunk.empty()) throw ConfigError("config: empty trunk");
  for (const auto& spec : config.trunk) {
    if (spec.kind == LayerKind::conv || spec.kind == LayerKind::maxpool) {
      if (spec.kernel < 1 || spec.stride < 1 || spec.pad < 0) {
        throw ConfigError(std::string("config: invalid ") +
                          layer_kind_name(spec.kind) + " geometry");
      }
    }
    if (spec.kind == LayerKind::conv && spec.channels < 1) {
      throw ConfigError("config: conv needs out_channels >= 1");
    }
  }
  if (config.has_localizer()) {
    const auto& head = config.localizer_head;
    if (head[0].kind != LayerKind::conv1x1) {
      throw ConfigError("config: localizer head must start with conv1x1");
    }
    if (head[0].channels != config.num_classes) {
      throw ConfigError("config: localizer conv1x1 channels (" +
                        std::to_string(head[0].channels) +
                        ") != num_classes (" +
                        std::to_string(config.num_classes) + ")");
    }
    config.localizer_pool();  // throws if no global pooling layer
  }
  if (config.has_classifier()) {
    // Final FC fan-out must equal the class count.
    int last_fc = -1;
    for (const auto& spec : config.classifier_head) {
      if (spec.kind == LayerKind::fully_connected) last_fc = spec.channels;
    }
    if (last_fc != config.num_classes) {
      throw ConfigError("config: classifier final FC width (" +
                        std::to_string(last_fc) + ") != num_classes (" +
                        std::to_string(config.num_classes) + ")");
    }
    for (const auto& spec : config.classifier_head) {
      if (spec.kind == LayerKind::dropout &&
          (spec.rate < 0.0 || spec.rate >= 1.0)) {
        throw ConfigError("config: dropout rate must be in [0,1)");
      }
    }
  }
  score_map_dims(config, config.input_h, config.input_w);
}

namespace {

std::string layer_to_line(const LayerSpec& spec) {
  std::ostringstream os;
  os << layer_kind_name(spec.kind);
  switch (spec.kind) {
    case LayerKind::conv:
      os << ' ' << spec.kernel << ' ' << spec.stride << ' ' << spec.pad << ' '
         << spec.channels;
      break;
    case LayerKind::maxpool:
      os << ' ' << spec.kernel << ' ' << spec.stride;
      break;
    case LayerKind::fully_connected:
    case LayerKind::conv1x1:
      os << ' ' << spec.channels;
      break;
    case LayerKind::dropout:
      os << ' ' << spec.rate;
      break;
    default:
      break;
  }
  return os.str();
}

LayerSpec layer_from_line(const std::string& line, int line_no) {
  std::istringstream is(line);
  std::string kind;
  is >> kind;
  auto need_int = [&](const char* what) {
    int v = 0;
    if (!(is >> v)) {
      throw LoadError("config line " + std::to_string(line_no) + ": " + kind +
                      " missing " + what);
    }
    return v;
  };
  if (kind == "conv") {
    const int k = need_int("kernel");
    const int s = need_int("stride");
    const int p = need_int("pad");
    const int ch = need_int("channels");
    return LayerSpec::Conv(k, s, p, ch);
  }
  if (kind == "relu") return LayerSpec::Relu();
  if (kind == "maxpool") {
    const int k = need_int("kernel");
    const int s = need_int("stride");
    return LayerSpec::MaxPool(k, s);
  }
  if (kind == "fully_connected") return LayerSpec::Fc(need_int("hidden"));
  if (kind == "dropout") {
    double rate = 0.0;
    if (!(is >> rate)) {
      throw LoadError("config line " + std::to_string(line_no) +
                      ": dropout missing rate");
    }
    return LayerSpec::Dropout(rate);
  }
  if (kind == "conv1x1") return LayerSpec::Conv1x1(need_int("channels"));
  if (kind == "global_max_pool") return LayerSpec::GlobalMaxPool();
  if (kind == "global_avg_pool") return LayerSpec::GlobalAvgPool();
  if (kind == "softmax") return LayerSpec::Softmax();
  throw LoadError("config line " + std::to_string(line_no) +
                  ": unknown layer kind '" + kind + "'");
}

}  // namespace

std::string config_to_text(const NetworkConfig& config) {
  std::ostringstream os;
  os << "name " << config.name << "\n";
  os << "classes " << config.num_classes << "\n";
  os << "input " << config.input_channels << ' ' << config.input_h << ' '
     << config.input_w << "\n";
  os << "input_scale " << config.input_scale << "\n";
  os << "relu_backward "
     << (config.relu_backward == nn::ReluBackwardMode::input_gate
             ? "input_gate"
             : "clamp_sum")
     << "\n";
  os << "[trunk]\n";
  for (const auto& spec : config.trunk) os << layer_to_line(spec) << "\n";
  if (config.has_classifier()) {
    os << "[classifier]\n";
    for (const auto& spec : config.classifier_head) {
      os << layer_to_line(spec) << "\n";
    }
  }
  if (config.has_localizer()) {
    os << "[localizer]\n";
    for (const auto& spec : config.localizer_head) {
      os << layer_to_line(spec) << "\n";
    }
  }
  return os.str();
}

NetworkConfig config_from_text(const std::string& text) {
  NetworkConfig cfg;
  cfg.trunk.clear();
  std::vector<LayerSpec>* section = nullptr;
  std::istringstream stream(text);
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    // strip comments and whitespace
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);

    if (line == "[trunk]") {
      section = &cfg.trunk;
      continue;
    }
    if (line == "[classifier]") {
      section = &cfg.classifier_head;
      continue;
    }
    if (line == "[localizer]") {
      section = &cfg.localizer_head;
      continue;
    }
    if (!section) {
      std::istringstream is(line);
      std::string key;
      is >> key;
      if (key == "name") {
        is >> cfg.name;
      } else if (key == "classes") {
        if (!(is >> cfg.num_classes)) {
          throw LoadError("config line " + std::to_string(line_no) +
                          ": classes needs an integer");
        }
      } else if (key == "input") {
        if (!(is >> cfg.input_channels >> cfg.input_h >> cfg.input_w)) {
          throw LoadError("config line " + std::to_string(line_no) +
                          ": input needs `channels h w`");
        }
      } else if (key == "input_scale") {
        if (!(is >> cfg.input_scale) || cfg.input_scale <= 0.0) {
          throw LoadError("config line " + std::to_string(line_no) +
                          ": input_scale needs a positive number");
        }
      } else if (key == "relu_backward") {
        std::string mode;
        is >> mode;
        if (mode == "input_gate") {
          cfg.relu_backward = nn::ReluBackwardMode::input_gate;
        } else if (mode == "clamp_sum") {
          cfg.relu_backward = nn::ReluBackwardMode::clamp_sum;
        } else {
          throw LoadError("config line " + std::to_string(line_no) +
                          ": relu_backward must be input_gate or clamp_sum");
        }
      } else {
        throw LoadError("config line " + std::to_string(line_no) +
                        ": unknown key '" + key + "'");
      }
      continue;
    }
    section->push_back(layer_from_line(line, line_no));
  }
  validate_config(cfg);
  return cfg;
}

NetworkConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open config file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return config_from_text(os.str());
}

}  // namespace stlkit
