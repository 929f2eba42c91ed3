#include <doctest.h>

#include <fstream>

#include "stlkit/checkpoint.hpp"
#include "test_helpers.hpp"

using namespace stlkit;
using stlkit::test::TempDir;

TEST_CASE("checkpoint round trip is bit exact") {
  const auto cfg = desk_net_config(PoolKind::avg);
  auto params = init_params<float>(cfg, 42);
  std::vector<RngStateEntry> rngs{{"shuffle", {1, 2, 3, 4}}};
  const auto ckpt = make_checkpoint(cfg, params, 17, 0.925, rngs);

  TempDir dir("ckpt");
  const auto path = dir.str("model.stlw");
  save_checkpoint(path, ckpt);
  const auto back = load_checkpoint(path);

  CHECK(back.version == 1);
  CHECK(back.epoch == 17);
  CHECK(back.val_accuracy == 0.925);
  REQUIRE(back.rng_states.size() == 1);
  CHECK(back.rng_states[0].name == "shuffle");
  CHECK(back.rng_states[0].state == std::array<std::uint64_t, 4>{1, 2, 3, 4});
  CHECK(back.config_text == config_to_text(cfg));
  REQUIRE(back.tensors.size() == ckpt.tensors.size());
  for (std::size_t i = 0; i < back.tensors.size(); ++i) {
    CHECK(back.tensors[i].name == ckpt.tensors[i].name);
    CHECK(back.tensors[i].data == ckpt.tensors[i].data);
  }

  const auto restored = params_from_checkpoint(back, cfg);
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    CHECK(restored.tensors[i].value == params.tensors[i].value);
  }

  // Save -> load -> save is byte-identical.
  const auto path2 = dir.str("model2.stlw");
  save_checkpoint(path2, back);
  CHECK(stlkit::test::read_file(path) == stlkit::test::read_file(path2));
}

TEST_CASE("checkpoint: corrupted magic is rejected") {
  const auto cfg = desk_net_config(PoolKind::avg);
  const auto params = init_params<float>(cfg, 1);
  const auto ckpt = make_checkpoint(cfg, params, 0, 0.0, {});
  TempDir dir("ckpt_magic");
  const auto path = dir.str("model.stlw");
  save_checkpoint(path, ckpt);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("WXYZ", 4);
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"),
                       LoadError);
}

TEST_CASE("checkpoint: truncation is rejected") {
  const auto cfg = desk_net_config(PoolKind::avg);
  const auto params = init_params<float>(cfg, 1);
  const auto ckpt = make_checkpoint(cfg, params, 0, 0.0, {});
  TempDir dir("ckpt_trunc");
  const auto path = dir.str("model.stlw");
  save_checkpoint(path, ckpt);
  const auto bytes = stlkit::test::read_file(path);
  const auto cut = dir.str("cut.stlw");
  {
    std::ofstream out(cut, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(cut), LoadError);
}

TEST_CASE("checkpoint: shape mismatch names the first offending tensor") {
  const auto desk = desk_net_config(PoolKind::avg);
  const auto params = init_params<float>(desk, 1);
  const auto ckpt = make_checkpoint(desk, params, 0, 0.0, {});
  const auto paper = paper_net_config(PoolKind::avg);
  CHECK_THROWS_WITH_AS(params_from_checkpoint(ckpt, paper),
                       doctest::Contains("trunk.conv0.w"), LoadError);
}

TEST_CASE("checkpoint: embedded config reconstructs the network") {
  const auto cfg = paper_net_config(PoolKind::max);
  const auto params = init_params<float>(cfg, 3);
  const auto ckpt = make_checkpoint(cfg, params, 5, 0.5, {});
  const auto back = config_from_checkpoint(ckpt);
  CHECK(back.name == "paper");
  CHECK(back.localizer_pool() == PoolKind::max);
  CHECK(back.input_h == 500);
  CHECK(geometry(back).global_stride == 32);
}
