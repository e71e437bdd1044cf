#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "saek/train.hpp"

using namespace saek;

namespace {

NetworkConfig tiny_cls() {
  SAETCNConfig c;
  c.width_divisor = 16;
  c.enabled_modules = 1;
  return c;
}

NetworkConfig tiny_seg() {
  SASNetConfig c;
  c.width_divisor = 16;
  return c;
}

TrainPlan plan_for(const NetworkConfig& cfg, std::size_t epochs) {
  TrainPlan p;
  p.epochs = epochs;
  p.batch_size = 4;
  p.seed = 11;
  p.loss_kind = default_loss(cfg);
  return p;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("same seed gives identical logs and parameters") {
    const auto cfg = tiny_cls();
    const auto data = synth_classification(2, 32, 5);
    const auto plan = plan_for(cfg, 2);
    auto a = initial_state(cfg, 3, plan.lr);
    auto b = initial_state(cfg, 3, plan.lr);
    CHECK(fit(cfg, data, plan, a) == fit(cfg, data, plan, b));
    CHECK(a.params == b.params);
    CHECK(a.adam.step == 4);
    CHECK(a.epoch == 2);
  }

  TEST_CASE("resuming from a checkpoint reproduces the uninterrupted tail") {
    const auto cfg = tiny_cls();
    const auto data = synth_classification(2, 32, 6);
    const auto plan = plan_for(cfg, 3);
    auto full = initial_state(cfg, 1, plan.lr);
    const auto full_log = fit(cfg, data, plan, full);

    auto part = initial_state(cfg, 1, plan.lr);
    auto short_plan = plan;
    short_plan.epochs = 1;
    fit(cfg, data, short_plan, part);
    const auto bytes = encode_checkpoint(to_checkpoint(part, cfg));
    auto resumed = state_from_checkpoint(decode_checkpoint(bytes), cfg);
    CHECK(resumed.epoch == 1);
    const auto tail = fit(cfg, data, plan, resumed);
    REQUIRE(tail.size() == 2);
    CHECK(tail[0] == full_log[1]);
    CHECK(tail[1] == full_log[2]);
    CHECK(resumed.params == full.params);
  }

  TEST_CASE("lr = 0 freezes every trainable tensor") {
    for (const auto& cfg : {tiny_cls(), tiny_seg()}) {
      const Dataset data = is_classifier(cfg) ? synth_classification(1, 32, 2) : synth_segmentation(4, 32, 2);
      auto plan = plan_for(cfg, 1);
      plan.lr = 0.0;
      auto state = initial_state(cfg, 9, 0.0);
      const auto before = state.params;
      fit(cfg, data, plan, state);
      for (const auto& e : state.params.entries()) {
        if (is_trainable(e.kind)) CHECK_MESSAGE(e.value == before.get(e.name), e.name);
      }
    }
  }

  TEST_CASE("on_epoch can stop early and checkpoints are written on schedule") {
    const auto cfg = tiny_cls();
    const auto data = synth_classification(1, 32, 2);
    auto plan = plan_for(cfg, 5);
    plan.checkpoint_every = 2;
    plan.checkpoint_dir = test::scratch_dir("train_ckpt");
    auto state = initial_state(cfg, 0, plan.lr);
    const auto log = fit(cfg, data, plan, state, [](const EpochLog& e, const TrainState&) { return e.epoch < 3; });
    CHECK(log.size() == 3);
    CHECK(std::filesystem::exists(plan.checkpoint_dir / "epoch_0002.saek"));
    CHECK_FALSE(std::filesystem::exists(plan.checkpoint_dir / "epoch_0004.saek"));
    CHECK(load_checkpoint(plan.checkpoint_dir / "epoch_0002.saek").epoch == 2u);
  }

  TEST_CASE("non-finite input aborts with epoch and batch coordinates") {
    const auto cfg = tiny_cls();
    auto data = synth_classification(1, 32, 2);
    data.samples[0].image[5] = std::nanf("");
    auto plan = plan_for(cfg, 1);
    plan.shuffle = false;
    auto state = initial_state(cfg, 0, plan.lr);
    CHECK_THROWS_WITH_AS(fit(cfg, data, plan, state), doctest::Contains("epoch 1, batch 0"), NumericError);
  }

  TEST_CASE("plan validation") {
    const auto cfg = tiny_cls();
    auto plan = plan_for(cfg, 1);
    plan.batch_size = 0;
    CHECK_THROWS_AS(plan.validate(cfg), ValidationError);
    plan = plan_for(cfg, 1);
    plan.loss_kind = LossKind::bce_logits;
    CHECK_THROWS_AS(plan.validate(cfg), ValidationError);
    plan = plan_for(cfg, 1);
    plan.lr = -1;
    CHECK_THROWS_AS(plan.validate(cfg), ValidationError);

    auto state = initial_state(cfg, 0, 1e-4);
    CHECK_THROWS_AS(fit(cfg, synth_segmentation(4, 32, 1), plan_for(cfg, 1), state), ValidationError);
    CHECK_THROWS_AS(fit(cfg, Dataset{}, plan_for(cfg, 1), state), ValidationError);
  }

  TEST_CASE("csv log format") {
    CHECK(log_csv_header() == "epoch,loss,accuracy");
    CHECK(log_csv({{1, 0.5, 0.25}}) == "epoch,loss,accuracy\n1,0.5,0.25\n");
  }

  TEST_CASE("argmax ties go to the lowest class") {
    CHECK(argmax_classes(Tensor::from({2, 3}, {1, 1, 0, 0, 2, 2})) == std::vector<std::size_t>{0, 1});
    Tensor maps(Shape{1, 2, 1, 2});
    maps[1] = 1;
    maps[2] = 1;
    CHECK(argmax_classes(maps) == std::vector<std::size_t>{1, 0});
  }
}
