#include <doctest.h>

#include <cmath>

#include "stlkit/model.hpp"
#include "test_helpers.hpp"

using namespace stlkit;
using stlkit::test::fill_uniform;

namespace {

Tensor4f random_batch(const NetworkConfig& cfg, int n, Rng& rng) {
  Tensor4f batch(n, cfg.input_channels, cfg.input_h, cfg.input_w);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    batch[i] = static_cast<float>(rng.next_double());
  }
  return batch;
}

Tensor4f one_hot(int n, int k, Rng& rng) {
  Tensor4f t(n, k, 1, 1);
  for (int s = 0; s < n; ++s) {
    t(s, static_cast<int>(rng.below(k)), 0, 0) = 1.0f;
  }
  return t;
}

}  // namespace

TEST_CASE("forward: desk preset score map shape") {
  const auto cfg = desk_net_config(PoolKind::avg);
  auto params = init_params<float>(cfg, 1);
  Rng rng(2);
  const auto batch = random_batch(cfg, 3, rng);
  const auto fwd = model_forward(cfg, params, batch, Mode::eval);
  CHECK(fwd.score_maps.dims() == Dims4{3, 2, 8, 8});
  CHECK(fwd.y_cls.dims() == Dims4{3, 2, 1, 1});
  CHECK(fwd.y_loc.dims() == Dims4{3, 2, 1, 1});
  CHECK(all_finite(fwd.score_maps));
  for (int s = 0; s < 3; ++s) {
    CHECK(fwd.y_cls(s, 0, 0, 0) + fwd.y_cls(s, 1, 0, 0) ==
          doctest::Approx(1.0));
    CHECK(fwd.y_loc(s, 0, 0, 0) + fwd.y_loc(s, 1, 0, 0) ==
          doctest::Approx(1.0));
  }
}

TEST_CASE("forward: zero weights give softmax of the biases") {
  const auto cfg = desk_net_config(PoolKind::avg);
  auto params = init_params<float>(cfg, 1);
  for (auto& p : params.tensors) p.value.fill(0.0f);
  Rng rng(3);
  const auto batch = random_batch(cfg, 2, rng);
  auto fwd = model_forward(cfg, params, batch, Mode::eval);
  for (int s = 0; s < 2; ++s) {
    CHECK(fwd.y_cls(s, 0, 0, 0) == doctest::Approx(0.5));
    CHECK(fwd.y_loc(s, 1, 0, 0) == doctest::Approx(0.5));
  }
  // Non-zero final biases shift the distribution accordingly.
  const int b_idx = params.find("classifier.fc2.b");
  REQUIRE(b_idx >= 0);
  params.tensors[b_idx].value[0] = 1.0f;
  params.tensors[b_idx].value[1] = -1.0f;
  fwd = model_forward(cfg, params, batch, Mode::eval);
  const double e2 = std::exp(2.0);
  CHECK(fwd.y_cls(0, 0, 0, 0) == doctest::Approx(e2 / (e2 + 1.0)));
}

TEST_CASE("forward: batch input must match the configured size") {
  const auto cfg = desk_net_config(PoolKind::avg);
  auto params = init_params<float>(cfg, 1);
  Tensor4f bad(1, 1, 32, 32);
  CHECK_THROWS_AS(model_forward(cfg, params, bad, Mode::eval), ConfigError);
}

TEST_CASE("geometry prediction matches actual score-map dims") {
  Rng rng(4);
  for (PoolKind pool : {PoolKind::max, PoolKind::avg}) {
    for (const auto& preset : {desk_net_config(pool)}) {
      const auto [mh, mw] =
          score_map_dims(preset, preset.input_h, preset.input_w);
      auto params = init_params<float>(preset, 1);
      const auto batch = random_batch(preset, 1, rng);
      const auto fwd = model_forward(preset, params, batch, Mode::eval);
      CHECK(fwd.score_maps.h() == mh);
      CHECK(fwd.score_maps.w() == mw);
    }
  }

  // Random small configs.
  int built = 0;
  while (built < 20) {
    NetworkConfig cfg;
    cfg.input_h = 16 + static_cast<int>(rng.below(17));
    cfg.input_w = 16 + static_cast<int>(rng.below(17));
    cfg.num_classes = 2;
    const int stages = 1 + static_cast<int>(rng.below(3));
    for (int s = 0; s < stages; ++s) {
      const int k = 1 + static_cast<int>(rng.below(5));
      const int stride = 1 + static_cast<int>(rng.below(2));
      const int pad = static_cast<int>(rng.below(3));
      cfg.trunk.push_back(LayerSpec::Conv(k, stride, pad,
                                          1 + static_cast<int>(rng.below(4))));
      if (rng.below(2)) cfg.trunk.push_back(LayerSpec::Relu());
      if (rng.below(2)) {
        cfg.trunk.push_back(LayerSpec::MaxPool(2 + static_cast<int>(rng.below(2)),
                                               1 + static_cast<int>(rng.below(2))));
      }
    }
    cfg.localizer_head = {LayerSpec::Conv1x1(2),
                          rng.below(2) ? LayerSpec::GlobalMaxPool()
                                       : LayerSpec::GlobalAvgPool(),
                          LayerSpec::Softmax()};
    try {
      validate_config(cfg);
    } catch (const ConfigError&) {
      continue;  // collapsed geometry; draw again
    }
    const auto [mh, mw] = score_map_dims(cfg, cfg.input_h, cfg.input_w);
    auto params = init_params<float>(cfg, built);
    const auto batch = random_batch(cfg, 1, rng);
    const auto fwd = model_forward(cfg, params, batch, Mode::eval);
    CHECK(fwd.score_maps.h() == mh);
    CHECK(fwd.score_maps.w() == mw);
    ++built;
  }
}

TEST_CASE("stl_loss: endpoints, direct value, affinity in alpha") {
  Tensor4f y_cls(1, 2, 1, 1), y_loc(1, 2, 1, 1), t(1, 2, 1, 1);
  y_cls(0, 0, 0, 0) = 0.5f;
  y_cls(0, 1, 0, 0) = 0.5f;
  y_loc(0, 0, 0, 0) = 0.25f;
  y_loc(0, 1, 0, 0) = 0.75f;
  t(0, 0, 0, 0) = 1.0f;

  const auto l0 = stl_loss(y_cls, y_loc, t, 0.0);
  CHECK(l0.total == l0.cls);
  const auto l1 = stl_loss(y_cls, y_loc, t, 1.0);
  CHECK(l1.total == l1.loc);
  const auto lh = stl_loss(y_cls, y_loc, t, 0.5);
  CHECK(lh.total ==
        doctest::Approx(0.5 * -std::log(0.5) + 0.5 * -std::log(0.25))
            .epsilon(1e-9));
  CHECK(lh.total == doctest::Approx(1.03972).epsilon(1e-4));

  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const double a = rng.next_double();
    const auto la = stl_loss(y_cls, y_loc, t, a);
    CHECK(std::fabs(la.total - ((1.0 - a) * l0.total + a * l1.total)) < 1e-12);
  }
  CHECK_THROWS_AS(stl_loss(y_cls, y_loc, t, 1.5), ConfigError);
  CHECK_THROWS_AS(stl_loss(y_cls, y_loc, t, -0.1), ConfigError);
}

TEST_CASE("backward probe: alpha endpoints zero the other head") {
  const auto cfg = desk_net_config(PoolKind::avg);
  const auto plan = plan_model(cfg);
  auto params = init_params<float>(cfg, 1, {0.0, true});
  Rng rng(6);
  const auto batch = random_batch(cfg, 2, rng);
  const auto targets = one_hot(2, 2, rng);

  auto fwd = model_forward(cfg, plan, params, batch, Mode::train);
  auto probe = model_backward(cfg, plan, params, fwd, targets, 0.0);
  CHECK(probe.delta_loc == Tensor4f(probe.delta_loc.dims()));
  bool cls_nonzero = false;
  for (std::size_t i = 0; i < probe.delta_cls.size(); ++i) {
    cls_nonzero |= probe.delta_cls[i] != 0.0f;
  }
  CHECK(cls_nonzero);

  fwd = model_forward(cfg, plan, params, batch, Mode::train);
  probe = model_backward(cfg, plan, params, fwd, targets, 1.0);
  CHECK(probe.delta_cls == Tensor4f(probe.delta_cls.dims()));
}

TEST_CASE("backward probe: max-pool head reaches the maps sparsely") {
  const auto cfg = desk_net_config(PoolKind::max);
  const auto plan = plan_model(cfg);
  auto params = init_params<float>(cfg, 2, {0.0, true});
  Rng rng(7);
  const auto batch = random_batch(cfg, 3, rng);
  const auto targets = one_hot(3, 2, rng);
  auto fwd = model_forward(cfg, plan, params, batch, Mode::train);
  const auto probe = model_backward(cfg, plan, params, fwd, targets, 1.0);
  REQUIRE(probe.delta_score_map.dims() == fwd.score_maps.dims());
  for (int s = 0; s < 3; ++s)
    for (int k = 0; k < 2; ++k) {
      int nonzero = 0;
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          nonzero += probe.delta_score_map(s, k, y, x) != 0.0f;
        }
      CHECK(nonzero <= 1);
    }
}

TEST_CASE("backward probe: avg-pool head reaches the maps uniformly") {
  const auto cfg = desk_net_config(PoolKind::avg);
  const auto plan = plan_model(cfg);
  auto params = init_params<float>(cfg, 2, {0.0, true});
  Rng rng(8);
  const auto batch = random_batch(cfg, 2, rng);
  const auto targets = one_hot(2, 2, rng);
  auto fwd = model_forward(cfg, plan, params, batch, Mode::train);
  const auto probe = model_backward(cfg, plan, params, fwd, targets, 1.0);
  for (int s = 0; s < 2; ++s)
    for (int k = 0; k < 2; ++k)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          CHECK(probe.delta_score_map(s, k, y, x) ==
                probe.delta_score_map(s, k, 0, 0));
        }
}

TEST_CASE("backward probe: shared delta is the gated head sum") {
  for (PoolKind pool : {PoolKind::max, PoolKind::avg}) {
    const auto cfg = desk_net_config(pool);
    const auto plan = plan_model(cfg);
    auto params = init_params<float>(cfg, 3, {0.0, true});
    Rng rng(9);
    const auto batch = random_batch(cfg, 2, rng);
    const auto targets = one_hot(2, 2, rng);
    auto fwd = model_forward(cfg, plan, params, batch, Mode::train);
    const auto probe = model_backward(cfg, plan, params, fwd, targets, 0.3);

    // Recompute the gate from the cached ReLU input (last trunk layer).
    REQUIRE(plan.trunk.back().spec.kind == LayerKind::relu);
    const auto& relu_in = fwd.trunk_cache.back().input;
    for (std::size_t i = 0; i < probe.delta_shared.size(); ++i) {
      const float expected =
          relu_in[i] > 0.0f ? probe.delta_cls[i] + probe.delta_loc[i] : 0.0f;
      CHECK(probe.delta_shared[i] == expected);
    }
  }
}

TEST_CASE("backward probe: head contributions scale with the loss weights") {
  const auto cfg = desk_net_config(PoolKind::avg);
  const auto plan = plan_model(cfg);
  auto params = init_params<double>(cfg, 4, {0.0, true});
  Rng rng(10);
  Tensor4d batch(2, 1, 64, 64);
  fill_uniform(batch, rng, 0.0, 1.0);
  Tensor4d targets(2, 2, 1, 1);
  targets(0, 0, 0, 0) = 1.0;
  targets(1, 1, 0, 0) = 1.0;

  auto fwd = model_forward(cfg, plan, params, batch, Mode::train);
  const auto p1 = model_backward(cfg, plan, params, fwd, targets, 0.25);
  const auto p2 = model_backward(cfg, plan, params, fwd, targets, 0.5);
  for (std::size_t i = 0; i < p1.delta_loc.size(); ++i) {
    CHECK(p2.delta_loc[i] == doctest::Approx(2.0 * p1.delta_loc[i]).epsilon(1e-12));
    // (1 - 0.5) / (1 - 0.25) = 2/3
    CHECK(p2.delta_cls[i] ==
          doctest::Approx(p1.delta_cls[i] * (0.5 / 0.75)).epsilon(1e-12));
  }
}

TEST_CASE("alpha schedule") {
  AlphaSchedule s;  // 0.1 -> 0.9 at 60
  CHECK(alpha_at(s, 0) == 0.1);
  CHECK(alpha_at(s, 59) == 0.1);
  CHECK(alpha_at(s, 60) == 0.9);
  CHECK(alpha_at(s, 1000) == 0.9);
  AlphaSchedule constant{0.5, 0.5, 17};
  CHECK(alpha_at(constant, 0) == 0.5);
  CHECK(alpha_at(constant, 100) == 0.5);
  AlphaSchedule ramp{0.0, 1.0, 10, AlphaSchedule::Mode::ramp};
  CHECK(alpha_at(ramp, 0) == 0.0);
  CHECK(alpha_at(ramp, 5) == doctest::Approx(0.5));
  CHECK(alpha_at(ramp, 10) == 1.0);
}

TEST_CASE("init_params: zero biases, documented std, determinism") {
  NetworkConfig cfg;
  cfg.input_h = 1;
  cfg.input_w = 1;
  cfg.input_channels = 1000;
  cfg.trunk = {LayerSpec::Relu()};
  cfg.classifier_head = {LayerSpec::Fc(1000), LayerSpec::Fc(2),
                         LayerSpec::Softmax()};
  auto params = init_params<float>(cfg, 123);

  const int w_idx = params.find("classifier.fc0.w");
  REQUIRE(w_idx >= 0);
  const auto& w = params.tensors[w_idx].value;
  REQUIRE(w.size() == 1000000u);
  double sum = 0, sum2 = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    sum += w[i];
    sum2 += static_cast<double>(w[i]) * w[i];
  }
  const double mean = sum / w.size();
  const double stddev = std::sqrt(sum2 / w.size() - mean * mean);
  CHECK(stddev == doctest::Approx(0.01).epsilon(0.02));

  for (const auto& p : params.tensors) {
    if (p.name.ends_with(".b")) {
      for (std::size_t i = 0; i < p.value.size(); ++i) CHECK(p.value[i] == 0.0f);
    }
  }

  auto params2 = init_params<float>(cfg, 123);
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    CHECK(params.tensors[t].value == params2.tensors[t].value);
  }
}

TEST_CASE("init_params: shared sections initialize identically across configs") {
  const auto full = desk_net_config(PoolKind::avg);
  auto cls_only = full;
  cls_only.localizer_head.clear();
  auto a = init_params<float>(full, 77);
  auto b = init_params<float>(cls_only, 77);
  for (const auto& p : b.tensors) {
    const int idx = a.find(p.name);
    REQUIRE(idx >= 0);
    CHECK(a.tensors[idx].value == p.value);
  }
}

TEST_CASE("plan rejects mid-head score map use") {
  // localizer head must begin with conv1x1
  auto cfg = desk_net_config(PoolKind::avg);
  cfg.localizer_head = {LayerSpec::GlobalAvgPool(), LayerSpec::Softmax()};
  CHECK_THROWS_AS(plan_model(cfg), ConfigError);
}
