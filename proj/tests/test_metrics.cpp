#include <cmath>

#include "doctest.h"
#include "saek/error.hpp"
#include "saek/metrics.hpp"
#include "saek/rng.hpp"

using namespace saek;

namespace {

double pair_oracle(const std::vector<double>& s, const std::vector<std::uint8_t>& pos) {
  double wins = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!pos[i] || pos[j]) continue;
      ++pairs;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / double(pairs);
}

MaskBatch batch(const std::vector<std::size_t>& m, std::size_t h, std::size_t w) { return {m, 1, h, w}; }

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("confusion hand example and partition") {
    const std::vector<std::size_t> t{0, 0, 1, 2}, p{0, 1, 1, 2};
    const auto cm = confusion(t, p, 3);
    const std::uint64_t expected[3][3] = {{1, 1, 0}, {0, 1, 0}, {0, 0, 1}};
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) CHECK(cm.at(i, j) == expected[i][j]);
      CHECK(cm.tp(i) + cm.fp(i) + cm.fn(i) + cm.tn(i) == 4);
    }
    const auto m = micro_metrics(cm);
    CHECK(m.precision == 0.75);
    CHECK(m.recall == 0.75);
    CHECK(m.f1 == 0.75);
    CHECK_THROWS_AS(confusion(t, std::vector<std::size_t>{0, 1, 3, 2}, 3), ValidationError);
    CHECK(micro_metrics(ConfusionMatrix(3)).f1 == 0.0);
  }

  TEST_CASE("micro P = R = F1 = accuracy over random trials") {
    SplitMix64 rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t n = 1 + rng.below(40), c = 2 + rng.below(5);
      std::vector<std::size_t> t(n), p(n);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < n; ++i) {
        t[i] = rng.below(c);
        p[i] = rng.below(c);
        hits += t[i] == p[i];
      }
      const auto m = micro_metrics(confusion(t, p, c));
      const double acc = double(hits) / double(n);
      REQUIRE(std::abs(m.precision - acc) < 1e-12);
      REQUIRE(std::abs(m.recall - acc) < 1e-12);
      REQUIRE(std::abs(m.f1 - acc) < 1e-12);
    }
  }

  TEST_CASE("R^2") {
    const std::vector<std::size_t> y{0, 1, 2, 3};
    CHECK(r2_score(y, std::vector<std::size_t>{1, 0, 2, 3}) == 0.6);
    CHECK(r2_score(y, y) == 1.0);
    CHECK(r2_score(std::vector<std::size_t>{0, 2}, std::vector<std::size_t>{1, 1}) == 0.0);
    CHECK_THROWS_AS(r2_score(std::vector<std::size_t>{1, 1}, std::vector<std::size_t>{1, 0}), ValidationError);
  }

  TEST_CASE("binary AUC equals exhaustive pair counting") {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<std::uint8_t> pos{0, 0, 1, 1};
    CHECK(auc_binary(s, pos) == pair_oracle(s, pos));
    CHECK(auc_binary(s, pos) == 0.75);
    CHECK(auc_binary(std::vector<double>{1, 2}, std::vector<std::uint8_t>{0, 1}) == 1.0);
    CHECK(auc_binary(std::vector<double>{2, 1}, std::vector<std::uint8_t>{0, 1}) == 0.0);
    CHECK_THROWS_AS(auc_binary(std::vector<double>{1, 2}, std::vector<std::uint8_t>{1, 1}), ValidationError);

    SplitMix64 rng(3);
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t n = 2 + rng.below(49);
      std::vector<double> sc(n);
      std::vector<std::uint8_t> lab(n);
      for (std::size_t i = 0; i < n; ++i) {
        sc[i] = double(rng.below(8)) / 8;  // coarse grid forces ties
        lab[i] = std::uint8_t(rng.below(2));
      }
      lab[0] = 0;
      lab[1] = 1;
      REQUIRE(auc_binary(sc, lab) == pair_oracle(sc, lab));
    }
  }

  TEST_CASE("one-vs-one AUC skips pairs with an absent class") {
    // 3 classes, class 2 never occurs.
    const std::vector<double> probs{0.8, 0.1, 0.1, 0.3, 0.6, 0.1, 0.6, 0.3, 0.1};
    const std::vector<std::size_t> labels{0, 1, 1};
    const auto r = auc_ovo(probs, labels, 3);
    REQUIRE(r.value);
    // Pair (0,1): score p0, positives {0.8}, negatives {0.3, 0.6} -> 1.
    CHECK(*r.value == 1.0);
    CHECK(r.skipped.size() == 2);
    const double micro = auc_micro(probs, labels, 3);
    CHECK(micro > 0.5);
    CHECK(micro <= 1.0);
  }

  TEST_CASE("segmentation hand cases") {
    // 4x4, |P| = |G| = 4, overlap 2.
    std::vector<std::size_t> g(16, 0), p(16, 0);
    for (auto i : {0, 1, 4, 5}) g[i] = 1;
    for (auto i : {1, 5, 2, 6}) p[i] = 1;
    const auto r = seg_metrics(batch(p, 4, 4), batch(g, 4, 4), 2);
    CHECK(std::abs(r.per_class[1].iou - 1.0 / 3) < 1e-15);
    CHECK(r.per_class[1].dsc == 0.5);
    CHECK(r.pixel_accuracy == 12.0 / 16);

    const auto same = seg_metrics(batch(g, 4, 4), batch(g, 4, 4), 2);
    for (const auto& c : same.per_class) {
      CHECK(c.iou == 1.0);
      CHECK(c.dsc == 1.0);
      CHECK(c.mcc == doctest::Approx(1.0));
      CHECK(c.specificity == 1.0);
      CHECK(c.bf1 == 1.0);
    }

    std::vector<std::size_t> far(16, 0);
    for (auto i : {10, 11, 14, 15}) far[i] = 1;
    const auto disjoint = seg_metrics(batch(far, 4, 4), batch(g, 4, 4), 2);
    CHECK(disjoint.per_class[1].iou == 0.0);
    CHECK(disjoint.per_class[1].dsc == 0.0);
  }

  TEST_CASE("DSC = 2 IoU / (1 + IoU) and range properties on random masks") {
    SplitMix64 rng(8);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t h = 4 + rng.below(8), w = 4 + rng.below(8), c = 2 + rng.below(3);
      std::vector<std::size_t> p(h * w), t(h * w);
      for (auto& v : p) v = rng.below(c);
      for (auto& v : t) v = rng.below(c);
      const auto r = seg_metrics(batch(p, h, w), batch(t, h, w), c);
      for (const auto& k : r.per_class) {
        REQUIRE(std::abs(k.dsc - 2 * k.iou / (1 + k.iou)) < 1e-12);
        REQUIRE(k.iou <= k.dsc);
        REQUIRE(k.mcc >= -1.0);
        REQUIRE(k.mcc <= 1.0);
        if (k.bf1) REQUIRE((*k.bf1 >= 0.0 && *k.bf1 <= 1.0));
      }
    }
  }

  TEST_CASE("correcting a pixel never lowers its class IoU") {
    SplitMix64 rng(12);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<std::size_t> p(36), t(36);
      for (auto& v : p) v = rng.below(3);
      for (auto& v : t) v = rng.below(3);
      std::size_t k = rng.below(36);
      while (p[k] == t[k]) k = (k + 1) % 36;
      const auto before = seg_metrics(batch(p, 6, 6), batch(t, 6, 6), 3).per_class[t[k]].iou;
      p[k] = t[k];
      REQUIRE(seg_metrics(batch(p, 6, 6), batch(t, 6, 6), 3).per_class[t[k]].iou >= before);
    }
  }

  TEST_CASE("boundary F1 with tolerance") {
    // A 2x2 block shifted by one column: every boundary pixel is within 1.
    std::vector<std::size_t> g(36, 0), p(36, 0);
    for (auto i : {14, 15, 20, 21}) g[i] = 1;
    for (auto i : {15, 16, 21, 22}) p[i] = 1;
    CHECK(boundary_f1(batch(p, 6, 6), batch(g, 6, 6), 1, 1) == 1.0);
    // Exact matching: P = {15,16,21,22}, G = {14,15,20,21}; matched 2 + 2.
    CHECK(boundary_f1(batch(p, 6, 6), batch(g, 6, 6), 1, 0) == 0.5);
    CHECK_FALSE(boundary_f1(batch(g, 6, 6), batch(g, 6, 6), 2, 2).has_value());

    const auto edge = boundary_map(std::vector<std::size_t>(9, 1), 3, 3, 1);
    CHECK(edge == std::vector<std::uint8_t>{1, 1, 1, 1, 0, 1, 1, 1, 1});
  }

  TEST_CASE("zero-denominator conventions") {
    // Every pixel class 1: class 1 has no negatives, class 0 is absent.
    const std::vector<std::size_t> all(4, 1);
    const auto r = seg_metrics(batch(all, 2, 2), batch(all, 2, 2), 2);
    CHECK(r.per_class[1].specificity == 1.0);
    CHECK(r.per_class[1].specificity_undefined);
    CHECK(r.per_class[1].mcc == 0.0);
    CHECK_FALSE(r.per_class[0].present);
  }

  TEST_CASE("classification report fields and rendering") {
    const std::vector<double> probs{0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.2, 0.2, 0.6, 0.5, 0.4, 0.1};
    const std::vector<std::size_t> labels{0, 1, 2, 1};
    const auto r = classification_report(probs, labels, 3);
    CHECK(r.accuracy == 0.75);
    CHECK(r.micro_f1 == 0.75);
    CHECK(r.confusion[1][0] == 1);
    const auto j = to_json(r);
    for (const char* key : {"accuracy", "micro_precision", "micro_recall", "micro_f1", "r2", "auc_ovo", "auc_micro"}) {
      CHECK_MESSAGE(j.contains(key), key);
    }
    CHECK(render_table(r).find("75.00") != std::string::npos);
  }

  TEST_CASE("mismatched mask shapes") {
    const std::vector<std::size_t> a(4, 0), b(6, 0);
    CHECK_THROWS_AS(seg_metrics(batch(a, 2, 2), batch(b, 2, 3), 2), ShapeError);
    const std::vector<std::size_t> bad{0, 5, 0, 0};
    CHECK_THROWS_AS(seg_metrics(batch(bad, 2, 2), batch(a, 2, 2), 2), ValidationError);
  }
}
