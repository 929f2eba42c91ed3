#include "stlkit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace stlkit {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  if (s.size() > 0xffff) throw InternalError("checkpoint: name too long");
  put<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (in.gcount() != sizeof(T)) {
    throw LoadError("truncated checkpoint: " + path);
  }
  return v;
}

std::string get_string(std::istream& in, const std::string& path) {
  const auto len = get<std::uint16_t>(in, path);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (in.gcount() != len) throw LoadError("truncated checkpoint: " + path);
  return s;
}

}  // namespace

Checkpoint make_checkpoint(const NetworkConfig& config,
                           const ModelParams<float>& params,
                           std::uint32_t epoch, double val_accuracy,
                           std::vector<RngStateEntry> rng_states) {
  Checkpoint ckpt;
  ckpt.config_text = config_to_text(config);
  ckpt.epoch = epoch;
  ckpt.val_accuracy = val_accuracy;
  ckpt.rng_states = std::move(rng_states);
  for (const auto& p : params.tensors) {
    CheckpointTensor t;
    t.name = p.name;
    t.dims = p.value.dims();
    t.data.assign(p.value.data(), p.value.data() + p.value.size());
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  namespace fs = std::filesystem;
  const fs::path tmp = fs::path(path).string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint: " + path);
    out.write("STLW", 4);
    put<std::uint32_t>(out, ckpt.version);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
      put_string(out, t.name);
      put<std::uint8_t>(out, 4);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.n));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.c));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.h));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.w));
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    put<std::uint32_t>(out, ckpt.epoch);
    put<double>(out, ckpt.val_accuracy);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.rng_states.size()));
    for (const auto& r : ckpt.rng_states) {
      put_string(out, r.name);
      for (std::uint64_t word : r.state) put<std::uint64_t>(out, word);
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.config_text.size()));
    out.write(ckpt.config_text.data(),
              static_cast<std::streamsize>(ckpt.config_text.size()));
    if (!out) throw InputError("failed writing checkpoint: " + path);
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "STLW", 4) != 0) {
    throw LoadError("bad checkpoint magic (expected STLW): " + path);
  }
  Checkpoint ckpt;
  ckpt.version = get<std::uint32_t>(in, path);
  if (ckpt.version != 1) {
    throw LoadError("unsupported checkpoint version " +
                    std::to_string(ckpt.version) + ": " + path);
  }
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = get_string(in, path);
    const auto ndim = get<std::uint8_t>(in, path);
    if (ndim != 4) {
      throw LoadError("checkpoint tensor " + t.name + ": expected 4 dims");
    }
    t.dims.n = static_cast<int>(get<std::uint32_t>(in, path));
    t.dims.c = static_cast<int>(get<std::uint32_t>(in, path));
    t.dims.h = static_cast<int>(get<std::uint32_t>(in, path));
    t.dims.w = static_cast<int>(get<std::uint32_t>(in, path));
    t.data.resize(t.dims.count());
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != t.data.size() * sizeof(float)) {
      throw LoadError("truncated checkpoint tensor " + t.name + ": " + path);
    }
    ckpt.tensors.push_back(std::move(t));
  }
  ckpt.epoch = get<std::uint32_t>(in, path);
  ckpt.val_accuracy = get<double>(in, path);
  const auto rng_count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < rng_count; ++i) {
    RngStateEntry r;
    r.name = get_string(in, path);
    for (auto& word : r.state) word = get<std::uint64_t>(in, path);
    ckpt.rng_states.push_back(std::move(r));
  }
  const auto cfg_len = get<std::uint32_t>(in, path);
  ckpt.config_text.resize(cfg_len);
  in.read(ckpt.config_text.data(), cfg_len);
  if (static_cast<std::uint32_t>(in.gcount()) != cfg_len) {
    throw LoadError("truncated checkpoint config echo: " + path);
  }
  return ckpt;
}

ModelParams<float> params_from_checkpoint(const Checkpoint& ckpt,
                                          const NetworkConfig& config) {
  ModelParams<float> params = init_params<float>(config, 0);
  for (auto& p : params.tensors) {
    const CheckpointTensor* found = nullptr;
    for (const auto& t : ckpt.tensors) {
      if (t.name == p.name) {
        found = &t;
        break;
      }
    }
    if (!found) {
      throw LoadError("checkpoint is missing tensor " + p.name);
    }
    if (!(found->dims == p.value.dims())) {
      throw LoadError("shape mismatch for tensor " + p.name + ": checkpoint " +
                      found->dims.str() + " vs config " +
                      p.value.dims().str());
    }
    std::copy(found->data.begin(), found->data.end(), p.value.data());
    p.grad.fill(0.0f);
    p.momentum.fill(0.0f);
  }
  if (ckpt.tensors.size() != params.tensors.size()) {
    for (const auto& t : ckpt.tensors) {
      if (params.find(t.name) < 0) {
        throw LoadError("checkpoint has unexpected tensor " + t.name);
      }
    }
  }
  return params;
}

NetworkConfig config_from_checkpoint(const Checkpoint& ckpt) {
  return config_from_text(ckpt.config_text);
}

}  // namespace stlkit
