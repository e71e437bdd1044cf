#include "doctest.h"
#include "helpers.hpp"
#include "saek/checkpoint.hpp"
#include "saek/networks.hpp"

using namespace saek;

TEST_SUITE("checkpoint") {
  TEST_CASE("single two-element tensor is 32 bytes with the documented layout") {
    Checkpoint c;
    c.params.emplace_back("w", Tensor::from({2}, {1.5f, -2.0f}));
    const auto bytes = encode_checkpoint(c);
    REQUIRE(bytes.size() == 4 + 4 + 4 + 2 + 1 + 1 + 8 + 8);
    const std::vector<std::uint8_t> expected{
        'S', 'A', 'E', 'K', 1, 0, 0, 0, 1, 0, 0, 0,   // magic, version, count
        1, 0, 'w', 1, 2, 0, 0, 0, 0, 0, 0, 0,         // name, rank, extent
        0x00, 0x00, 0xc0, 0x3f, 0x00, 0x00, 0x00, 0xc0};
    CHECK(bytes == expected);
  }

  TEST_CASE("config text is the final rank-1 byte entry") {
    Checkpoint c;
    c.config_json = "{}";
    const auto bytes = encode_checkpoint(c);
    CHECK(bytes.size() == 12 + 2 + 11 + 1 + 8 + 2);
    CHECK(bytes[bytes.size() - 2] == '{');
    CHECK(decode_checkpoint(bytes).config_json == "{}");
  }

  TEST_CASE("save -> load -> save is byte-identical with optimizer state") {
    const NetworkConfig cfg = [] {
      SAETCNConfig c;
      c.width_divisor = 16;
      c.enabled_modules = 1;
      return NetworkConfig{c};
    }();
    auto params = init_params<float>(cfg, 4);
    AdamState adam;
    adam.step = 7;
    for (const auto& e : params.entries()) {
      if (!is_trainable(e.kind)) continue;
      adam.m[e.name] = test::random(e.value.shape(), 1);
      adam.v[e.name] = test::random(e.value.shape(), 2, 0, 1);
    }
    const auto dir = test::scratch_dir("ckpt");
    const auto ckpt = make_checkpoint(params, &adam, to_json(cfg).dump(), 3);
    save_checkpoint(dir / "a.saek", ckpt);
    const auto loaded = load_checkpoint(dir / "a.saek");
    save_checkpoint(dir / "b.saek", loaded);
    CHECK(read_file(dir / "a.saek") == read_file(dir / "b.saek"));
    CHECK(loaded.adam->step == 7);
    CHECK(loaded.epoch == 3u);

    auto fresh = declare_params<float>(cfg);
    restore_params(loaded, fresh);
    CHECK(fresh == params);
  }

  TEST_CASE("malformed files") {
    Checkpoint c;
    c.params.emplace_back("w", Tensor::from({2}, {1.0f, 2.0f}));
    const auto good = encode_checkpoint(c);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad_magic), IoError);

    auto bad_version = good;
    bad_version[4] = 2;
    CHECK_THROWS_WITH_AS(decode_checkpoint(bad_version), doctest::Contains("version 2"), IoError);

    for (std::size_t cut : {3u, 11u, 20u, 31u}) {
      CHECK_THROWS_AS(decode_checkpoint(std::vector<std::uint8_t>(good.begin(), good.begin() + cut)), IoError);
    }
    auto trailing = good;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_checkpoint(trailing), IoError);

    // Two entries both named "w".
    auto dup = good;
    dup[8] = 2;
    dup.insert(dup.end(), good.begin() + 12, good.end());
    CHECK_THROWS_WITH_AS(decode_checkpoint(dup), doctest::Contains("duplicate"), IoError);

    c.params.emplace_back("w", Tensor(Shape{1}));
    CHECK_THROWS_AS(encode_checkpoint(c), ValidationError);

    CHECK_THROWS_AS(load_checkpoint(test::scratch_dir("ckpt_missing") / "nope.saek"), IoError);
  }

  TEST_CASE("restore rejects missing, extra and reshaped tensors") {
    ParamStore<float> store;
    store.declare("a", Shape{2}, ParamKind::weight);
    Checkpoint c;
    CHECK_THROWS(restore_params(c, store));
    c.params.emplace_back("a", Tensor(Shape{3}));
    CHECK_THROWS_WITH_AS(restore_params(c, store), doctest::Contains("shape"), ValidationError);
    c.params[0].second = Tensor(Shape{2}, 5.0f);
    c.params.emplace_back("b", Tensor(Shape{1}));
    CHECK_THROWS(restore_params(c, store));
    c.params.pop_back();
    restore_params(c, store);
    CHECK(store.get("a")[1] == 5.0f);
  }
}
