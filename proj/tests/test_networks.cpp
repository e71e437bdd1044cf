#include <cmath>
#include <map>

#include "doctest.h"
#include "helpers.hpp"
#include "saek/networks.hpp"

using namespace saek;
using nlohmann::json;

namespace {

// Independent closed-form parameter count for an SAETCN config.
std::size_t saeb_params(std::size_t in, std::size_t out) {
  const std::size_t b = out / 4;
  return in * b                      // b1.conv
         + (in * b + b) + 2 * b      // b2.reduce + bn
         + 9 * b * b                 // b2.conv
         + (in * b + b) + 2 * b      // b3.reduce + bn
         + 25 * b * b                // b3.conv
         + in * b                    // b4.conv
         + 2 * out                   // concat_bn
         + in * out + 2 * out;       // skip conv + bn
}

std::size_t saetcn_oracle(const SAETCNConfig& c) {
  const std::size_t d = c.width_divisor;
  std::size_t ch = c.stem_out / d;
  std::size_t n = 49 * c.in_channels * ch + ch + 2 * ch;
  for (std::size_t m = 0; m < c.enabled_modules; ++m) {
    const auto& p = c.module_plan[m];
    for (std::size_t b = 0; b < p.blocks; ++b) {
      n += saeb_params(ch, p.out_ch / d);
      ch = p.out_ch / d;
    }
  }
  const std::size_t hidden = c.head_hidden / d;
  return n + ch * hidden + hidden + hidden * c.num_classes + c.num_classes;
}

std::size_t saeb_records(const Summary& s, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& l : s.layers)
    if (l.kind == "SAEB" && l.name.rfind(prefix + ".", 0) == 0) ++n;
  return n;
}

const LayerRecord& record(const Summary& s, const std::string& name) {
  for (const auto& l : s.layers)
    if (l.name == name) return l;
  FAIL("no layer " << name);
  return s.layers.front();
}

SAETCNConfig ablated(std::size_t modules) {
  SAETCNConfig c;
  c.enabled_modules = modules;
  return c;
}

}  // namespace

TEST_SUITE("networks") {
  TEST_CASE("full SAETCN census") {
    const Summary s = summarize(SAETCNConfig{}, 224, 224);
    CHECK(s.count_kind("SAEB") == 16);
    CHECK(saeb_records(s, "TriSAE") == 3);
    CHECK(saeb_records(s, "QuadSAE") == 4);
    CHECK(saeb_records(s, "HexaSAE") == 6);
    CHECK(saeb_records(s, "FinalFusion") == 3);
    CHECK(record(s, "stem").out == Shape{1, 64, 56, 56});
    CHECK(record(s, "TriSAE.2").out == Shape{1, 256, 56, 56});
    CHECK(record(s, "QuadSAE.0").in == Shape{1, 256, 56, 56});
    CHECK(record(s, "QuadSAE.3").out == Shape{1, 512, 28, 28});
    CHECK(record(s, "HexaSAE.0").in[1] == 512);
    CHECK(record(s, "HexaSAE.5").out == Shape{1, 1024, 14, 14});
    CHECK(record(s, "FinalFusion.2").out == Shape{1, 2048, 7, 7});
    CHECK(record(s, "head.fc1").out == Shape{1, 2048});
    CHECK(s.output == Shape{1, 4});
    CHECK(s.render().find("SAEB blocks: 16") != std::string::npos);
  }

  TEST_CASE("SAETCN shapes") {
    CHECK(summarize(SAETCNConfig{}, 224, 224).output == Shape{1, 4});
    CHECK(summarize(SAETCNConfig{}, 64, 64).output == Shape{1, 4});
    ParamStore<float> store;
    Tape<float> tape;
    Graph<float> g(tape, store, nn::Mode::eval, Graph<float>::Phase::declare);
    CHECK(saetcn_forward(g, g.input(Tensor(Shape{2, 3, 224, 224})), SAETCNConfig{}).shape() == Shape{2, 4});
    CHECK_THROWS_AS(summarize(SAETCNConfig{}, 31, 64), ValidationError);
  }

  TEST_CASE("ablated NCA-only network has a 64-channel head and still emits 4 logits") {
    const Summary s = summarize(ablated(0), 64, 64);
    CHECK(s.count_kind("SAEB") == 0);
    CHECK(record(s, "head.fc1").in == Shape{1, 64});
    CHECK(s.output == Shape{1, 4});
    CHECK(count_params(ablated(0)) < count_params(SAETCNConfig{}));
    for (std::size_t m = 0; m <= 4; ++m) CHECK(summarize(ablated(m), 64, 64).output == Shape{1, 4});
  }

  TEST_CASE("parameter counts match the closed-form oracle") {
    for (std::size_t d : {1u, 8u, 16u}) {
      SAETCNConfig c;
      c.width_divisor = d;
      CAPTURE(d);
      CHECK(count_params(c) == saetcn_oracle(c));
    }
    for (std::size_t m = 0; m <= 4; ++m) CHECK(count_params(ablated(m)) == saetcn_oracle(ablated(m)));
  }

  TEST_CASE("width 1/8 scales conv weights between scaled channels by exactly 1/64") {
    SAETCNConfig narrow;
    narrow.width_divisor = 8;
    const auto full = declare_params<float>(SAETCNConfig{});
    const auto small = declare_params<float>(narrow);
    REQUIRE(full.size() == small.size());
    std::size_t full_inner = 0, small_inner = 0;
    for (std::size_t i = 0; i < full.size(); ++i) {
      const auto& a = full.entries()[i];
      const auto& b = small.entries()[i];
      CHECK(a.name == b.name);
      if (a.kind != ParamKind::weight || a.name == "stem.conv.weight" || a.name == "head.fc2.weight") continue;
      CHECK(a.value.size() == 64 * b.value.size());
      full_inner += a.value.size();
      small_inner += b.value.size();
    }
    CHECK(small_inner * 64 == full_inner);
    // Whole-model ratio sits just above 1/64: biases, BN and the fixed
    // input/output widths only shrink by 1/8.
    const double ratio = double(count_params(narrow)) / double(count_params(SAETCNConfig{}));
    CHECK(ratio > 1.0 / 64.0);
    CHECK(ratio < 1.0 / 60.0);
  }

  TEST_CASE("init_params: determinism, conventions, weight bounds") {
    SAETCNConfig c;
    c.width_divisor = 8;
    const auto a = init_params<float>(c, 42);
    CHECK(a == init_params<float>(c, 42));
    CHECK_FALSE(a == init_params<float>(c, 43));

    std::size_t draws = 0;
    double max_ratio = 0.0;
    for (const auto& e : a.entries()) {
      switch (e.kind) {
        case ParamKind::weight: {
          const double b = std::sqrt(6.0 / double(e.fan_in));
          for (float v : e.value.data()) {
            CHECK_MESSAGE(std::abs(v) <= b, e.name);
            max_ratio = std::max(max_ratio, std::abs(v) / b);
          }
          draws += e.value.size();
          break;
        }
        case ParamKind::bn_gamma:
        case ParamKind::bn_running_var:
          for (float v : e.value.data()) CHECK(v == 1.0f);
          break;
        default:
          for (float v : e.value.data()) CHECK(v == 0.0f);
      }
    }
    CHECK(draws >= 100000);
    CHECK(max_ratio > 0.999);
  }

  TEST_CASE("logits are finite across 100 seeds") {
    SAETCNConfig c;
    c.width_divisor = 16;
    const Tensor x = test::random(Shape{2, 3, 32, 32}, 1, 0.0, 1.0);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      auto params = init_params<float>(c, seed);
      Tape<float> tape;
      tape.set_grad_enabled(false);
      Graph<float> g(tape, params, nn::Mode::eval);
      CHECK(saetcn_forward(g, g.input(x), c).value().all_finite());
    }
  }

  TEST_CASE("SAS-Net output matches the input extent for 16-divisible sizes") {
    for (std::size_t e : {16u, 32u, 48u, 64u, 128u}) {
      CAPTURE(e);
      const Summary s = summarize(SASNetConfig{}, e, e);
      CHECK(s.output == Shape{1, 4, e, e});
      CHECK(s.count_kind("SAEB") == 5);
      CHECK(s.count_kind("SFD") == 4);
    }
    CHECK_THROWS_AS(summarize(SASNetConfig{}, 40, 40), ValidationError);
    CHECK_THROWS_AS(summarize(SASNetConfig{}, 64, 24), ValidationError);
  }

  TEST_CASE("ESIM routing: decoder stage n consumes encoder stage 5 - n") {
    SASNetConfig c;
    c.width_divisor = 16;
    auto params = init_params<float>(c, 7);
    const Tensor x = test::random(Shape{1, 3, 32, 32}, 8, 0.0, 1.0);

    auto forward = [&](const std::string& zeroed) {
      std::map<std::string, Tensor> seen;
      Tape<float> tape;
      tape.set_grad_enabled(false);
      Graph<float> g(tape, params, nn::Mode::eval);
      g.set_probe([&](const std::string& name, const Tensor& v) -> std::optional<Tensor> {
        if (name == zeroed) {
          seen[name] = Tensor(v.shape());
          return Tensor(v.shape());
        }
        seen[name] = v;
        return std::nullopt;
      });
      sasnet_forward(g, g.input(x), c);
      return seen;
    };

    const auto base = forward("");
    for (std::size_t n = 1; n <= 4; ++n) {
      const std::string enc = "enc" + std::to_string(5 - n) + ".skip";
      CHECK(base.at("sfd" + std::to_string(n) + ".skip_in") == base.at(enc));
    }
    for (std::size_t k = 1; k <= 4; ++k) {
      const auto probed = forward("enc" + std::to_string(k) + ".skip");
      for (std::size_t n = 1; n <= 4; ++n) {
        const std::string out = "sfd" + std::to_string(n) + ".out";
        CAPTURE(k);
        CAPTURE(n);
        CHECK((probed.at(out) == base.at(out)) == (n < 5 - k));
      }
    }
  }

  TEST_CASE("config JSON round trip and width forms") {
    SAETCNConfig c;
    c.width_divisor = 8;
    c.enabled_modules = 2;
    const json doc = to_json(c);
    CHECK(doc.at("width_scale").get<double>() == 0.125);
    CHECK(doc.at("enabled_modules") == json({"TriSAE", "QuadSAE"}));
    CHECK(to_json(config_from_json(doc)) == doc);

    json frac = to_json(SASNetConfig{});
    frac["width_scale"] = "1/8";
    CHECK(std::get<SASNetConfig>(config_from_json(frac)).width_divisor == 8);
    CHECK(to_json(config_from_json(frac)) == to_json(config_from_json(json{{"arch", "sasnet"}, {"width_scale", 0.125}})));
  }

  TEST_CASE("strict config parsing") {
    const json base = to_json(SAETCNConfig{});
    auto bad = [&](auto mutate) {
      json d = base;
      mutate(d);
      return d;
    };
    CHECK_THROWS_AS(config_from_json(bad([](json& d) { d["dropout"] = 0.5; })), ValidationError);
    CHECK_THROWS_AS(config_from_json(bad([](json& d) { d["stem"]["kernel"] = 7; })), ValidationError);
    CHECK_THROWS_AS(config_from_json(bad([](json& d) { d["module_plan"][0]["stride"] = 2; })), ValidationError);
    CHECK_THROWS_AS(config_from_json(bad([](json& d) { d["arch"] = "resnet"; })), ValidationError);
    CHECK_THROWS_AS(config_from_json(bad([](json& d) { d["num_classes"] = 1; })), ValidationError);
    CHECK_THROWS_AS(config_from_json(bad([](json& d) { d["width_scale"] = "1/3"; })), ValidationError);
    CHECK_THROWS_AS(config_from_json(bad([](json& d) { d["width_scale"] = 2.0; })), ValidationError);
    CHECK_THROWS_AS(config_from_json(bad([](json& d) { d["enabled_modules"] = {"QuadSAE"}; })), ValidationError);
    CHECK_THROWS_WITH_AS(config_from_json(bad([](json& d) { d["module_plan"][1]["in_ch"] = 128; })),
                         doctest::Contains("channel plan"), ValidationError);
    CHECK_THROWS_AS(config_from_json(json{{"arch", "sasnet"}, {"decoder", {512, 256}}}), ValidationError);
  }
}
