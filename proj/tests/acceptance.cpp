// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "saek/gradcheck_suite.hpp"
#include "saek/losses.hpp"
#include "saek/metrics.hpp"
#include "saek/rng.hpp"
#include "saek/train.hpp"

using namespace saek;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradBudgetSeconds = 300.0;
constexpr double kLossTolerance = 1e-6;
constexpr double kLossConstTolerance = 1e-9;
constexpr double kDscTolerance = 1e-12;
constexpr double kAdamTolerance = 1e-10;
constexpr double kAdamFirstStepRel = 1e-6;
constexpr double kClsTarget = 0.95;
constexpr std::size_t kClsEpochs = 200;
constexpr double kSegTarget = 0.97;
constexpr std::size_t kSegEpochs = 300;

// Overfit runs use the default learning rate; batch sizes are free choices.
constexpr double kOverfitLr = 1e-4;
constexpr std::size_t kClsBatch = 8;
constexpr std::size_t kSegBatch = 2;
constexpr std::uint64_t kOverfitSeed = 3;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- gradient suite --------------------------------------------------------

Outcome gradient_suite() {
  SuiteOptions o;
  o.tolerance = kGradTolerance;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t failed = 0, total = 0;
  std::string worst;
  double worst_rel = 0.0;
  run_gradcheck_suite(o, [&](const SuiteCase& c) {
    ++total;
    if (!c.report.passed()) {
      ++failed;
      worst += " " + c.name;
    }
    if (c.report.max_rel_error() > worst_rel) worst_rel = c.report.max_rel_error();
  });
  const double secs = seconds_since(t0);
  Outcome r;
  r.pass = failed == 0 && secs < kGradBudgetSeconds;
  r.detail = fmt("%zu/%zu cases pass, max rel %.2e, %.1fs (budget %.0fs)", total - failed, total, worst_rel, secs,
                 kGradBudgetSeconds);
  if (failed) r.detail += "; failing:" + worst;
  return r;
}

// ---- census ----------------------------------------------------------------

Outcome census() {
  const Summary s = summarize(SAETCNConfig{}, 224, 224);
  std::map<std::string, std::size_t> per_module;
  std::map<std::string, std::size_t> module_out;
  for (const auto& l : s.layers) {
    if (l.kind != "SAEB") continue;
    const std::string module = l.name.substr(0, l.name.find('.'));
    ++per_module[module];
    module_out[module] = l.out[1];
  }
  std::size_t stem_out = 0;
  for (const auto& l : s.layers)
    if (l.name == "stem") stem_out = l.out[1];

  const bool counts = s.count_kind("SAEB") == 16 && per_module["TriSAE"] == 3 && per_module["QuadSAE"] == 4 &&
                      per_module["HexaSAE"] == 6 && per_module["FinalFusion"] == 3;
  const bool ladder = stem_out == 64 && module_out["TriSAE"] == 256 && module_out["QuadSAE"] == 512 &&
                      module_out["HexaSAE"] == 1024 && module_out["FinalFusion"] == 2048;
  const bool head = s.output == Shape{1, 4};
  return {counts && ladder && head,
          fmt("SAEB %zu = %zu/%zu/%zu/%zu, ladder %zu->%zu->%zu->%zu->%zu, output %s", s.count_kind("SAEB"),
              per_module["TriSAE"], per_module["QuadSAE"], per_module["HexaSAE"], per_module["FinalFusion"], stem_out,
              module_out["TriSAE"], module_out["QuadSAE"], module_out["HexaSAE"], module_out["FinalFusion"],
              to_string(s.output).c_str())};
}

// ---- ESIM wiring -----------------------------------------------------------

Outcome esim_wiring() {
  SASNetConfig c;
  c.width_divisor = 16;
  auto params = init_params<float>(c, 7);
  SplitMix64 rng(8);
  Tensor x(Shape{1, 3, 32, 32});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));

  auto forward = [&](const std::string& zeroed) {
    std::map<std::string, Tensor> seen;
    Tape<float> tape;
    tape.set_grad_enabled(false);
    Graph<float> g(tape, params, nn::Mode::eval);
    g.set_probe([&](const std::string& name, const Tensor& v) -> std::optional<Tensor> {
      seen[name] = name == zeroed ? Tensor(v.shape()) : v;
      if (name == zeroed) return Tensor(v.shape());
      return std::nullopt;
    });
    sasnet_forward(g, g.input(x), c);
    return seen;
  };

  bool routed = true;
  const auto base = forward("");
  for (std::size_t n = 1; n <= 4; ++n) {
    routed = routed && base.at("sfd" + std::to_string(n) + ".skip_in") == base.at("enc" + std::to_string(5 - n) + ".skip");
  }
  // Zeroing encoder skip k must change decoder stage n exactly when n >= 5 - k.
  bool causal = true;
  for (std::size_t k = 1; k <= 4; ++k) {
    const auto probed = forward("enc" + std::to_string(k) + ".skip");
    for (std::size_t n = 1; n <= 4; ++n) {
      const std::string out = "sfd" + std::to_string(n) + ".out";
      causal = causal && ((probed.at(out) == base.at(out)) == (n < 5 - k));
    }
  }
  bool shapes = true;
  std::string sizes;
  for (std::size_t size : {16, 32, 48, 64, 128}) {
    const Summary s = summarize(SASNetConfig{}, size, size);
    const bool ok = s.output == Shape{1, 4, size, size};
    shapes = shapes && ok;
    sizes += fmt(" %zu%s", size, ok ? "" : "(bad)");
  }
  return {routed && causal && shapes, fmt("skip_in == enc(5-n).skip: %s; zeroing pattern: %s; same-size output for%s",
                                          routed ? "yes" : "no", causal ? "as routed" : "WRONG", sizes.c_str())};
}

// ---- loss oracles ----------------------------------------------------------

Outcome loss_oracles() {
  SplitMix64 rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(6), c = 2 + rng.below(5);
    TensorD logits(Shape{n, c});
    std::vector<std::size_t> labels(n);
    for (auto& v : logits.data()) v = rng.uniform(-10.0, 10.0);
    for (auto& l : labels) l = rng.below(c);
    double naive_ce = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0.0;
      for (std::size_t k = 0; k < c; ++k) z += std::exp(logits[i * c + k]);
      naive_ce += -std::log(std::exp(logits[i * c + labels[i]]) / z);
    }
    naive_ce /= double(n);

    TensorD targets(Shape{n, c});
    for (auto& v : targets.data()) v = double(rng.below(2));
    double naive_bce = 0.0;
    for (std::size_t i = 0; i < n * c; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-logits[i]));
      naive_bce += -(targets[i] * std::log(p) + (1 - targets[i]) * std::log(1 - p));
    }
    naive_bce /= double(n * c);

    Tape<double> tape;
    const auto x = tape.leaf(logits);
    worst = std::max(worst, std::abs(cross_entropy(x, labels).value()[0] - naive_ce));
    worst = std::max(worst, std::abs(bce_with_logits(x, targets).value()[0] - naive_bce));
  }
  Tape<double> tape;
  const double uniform = cross_entropy(tape.leaf(TensorD(Shape{1, 4})), {1}).value()[0];
  const double zero = bce_with_logits(tape.leaf(TensorD(Shape{1})), TensorD(Shape{1}, 1.0)).value()[0];
  const double e_ce = std::abs(uniform - std::log(4.0)), e_bce = std::abs(zero - std::log(2.0));
  return {worst <= kLossTolerance && e_ce <= kLossConstTolerance && e_bce <= kLossConstTolerance,
          fmt("max |err| %.2e over 1000 cases (tol %.0e); |CE-ln4| %.1e, |BCE-ln2| %.1e (tol %.0e)", worst,
              kLossTolerance, e_ce, e_bce, kLossConstTolerance)};
}

// ---- metric oracles --------------------------------------------------------

Outcome metric_oracles() {
  SplitMix64 rng(99);
  bool auc_exact = true;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng.below(49);
    std::vector<double> s(n);
    std::vector<std::uint8_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = double(rng.below(10)) / 10.0;
      pos[i] = std::uint8_t(rng.below(2));
    }
    pos[0] = 0;
    pos[1] = 1;
    double wins = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (pos[i] && !pos[j]) {
          ++pairs;
          wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    auc_exact = auc_exact && auc_binary(s, pos) == wins / double(pairs);
  }

  bool micro = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(60), c = 2 + rng.below(6);
    std::vector<std::size_t> t(n), p(n);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = rng.below(c);
      p[i] = rng.below(c);
      hits += t[i] == p[i];
    }
    const auto m = micro_metrics(confusion(t, p, c));
    const double acc = double(hits) / double(n);
    micro = micro && std::abs(m.precision - acc) < 1e-12 && std::abs(m.recall - acc) < 1e-12 &&
            std::abs(m.f1 - acc) < 1e-12;
  }

  double dsc_err = 0.0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t h = 4 + rng.below(12), w = 4 + rng.below(12), c = 2 + rng.below(3);
    std::vector<std::size_t> p(h * w), t(h * w);
    for (auto& v : p) v = rng.below(c);
    for (auto& v : t) v = rng.below(c);
    const auto r = seg_metrics({p, 1, h, w}, {t, 1, h, w}, c);
    for (const auto& k : r.per_class) dsc_err = std::max(dsc_err, std::abs(k.dsc - 2 * k.iou / (1 + k.iou)));
  }

  const std::vector<std::size_t> y{0, 1, 2, 3}, yhat{1, 0, 2, 3};
  const double r2 = r2_score(y, yhat);
  return {auc_exact && micro && dsc_err <= kDscTolerance && r2 == 0.6,
          fmt("AUC == pair count: %s; micro P=R=F1=acc: %s; max |DSC-2IoU/(1+IoU)| %.1e; R2 = %.17g",
              auc_exact ? "yes" : "no", micro ? "yes" : "no", dsc_err, r2)};
}

// ---- Adam reference --------------------------------------------------------

Outcome adam_reference() {
  std::vector<double> w{1.0}, m{0.0}, v{0.0};
  std::uint64_t step = 0;
  double rw = 1.0, rm = 0.0, rv = 0.0, worst = 0.0;
  for (int t = 1; t <= 20; ++t) {
    adam_step(w, {2.0 * w[0]}, m, v, step, 1e-4);
    const double g = 2.0 * rw;
    rm = 0.9 * rm + 0.1 * g;
    rv = 0.999 * rv + 0.001 * g * g;
    rw -= 1e-4 * (rm / (1 - std::pow(0.9, t))) / (std::sqrt(rv / (1 - std::pow(0.999, t))) + 1e-8);
    worst = std::max(worst, std::abs(w[0] - rw));
  }

  ParamStore<float> store;
  store.declare("w", Shape{1}, ParamKind::weight);
  AdamState st;
  adam_step(store, {{"w", Tensor::from({1}, {1.0f})}}, st);
  const double first = -double(store.get("w")[0]);
  const double rel = std::abs(first - st.lr) / st.lr;
  return {worst <= kAdamTolerance && rel <= kAdamFirstStepRel,
          fmt("20-step max |w - ref| %.2e (tol %.0e); first step %.6e vs lr %.0e", worst, kAdamTolerance, first, st.lr)};
}

// ---- overfit ---------------------------------------------------------------

struct OverfitRun {
  bool reached = false;
  std::size_t epoch = 0;
  double best = 0.0;
  double seconds = 0.0;
};

OverfitRun overfit(const NetworkConfig& cfg, const Dataset& data, std::size_t batch, std::size_t epochs, double target) {
  TrainPlan plan;
  plan.epochs = epochs;
  plan.batch_size = batch;
  plan.seed = kOverfitSeed;
  plan.loss_kind = default_loss(cfg);
  plan.lr = kOverfitLr;
  auto state = initial_state(cfg, kOverfitSeed, plan.lr);
  OverfitRun r;
  const auto t0 = std::chrono::steady_clock::now();
  fit(cfg, data, plan, state, [&](const EpochLog& e, const TrainState&) {
    r.best = std::max(r.best, e.accuracy);
    r.epoch = e.epoch;
    if (e.accuracy >= target) r.reached = true;
    return !r.reached;
  });
  r.seconds = seconds_since(t0);
  return r;
}

Outcome overfit_sanity() {
  SAETCNConfig cls;
  cls.width_divisor = 8;
  const auto a = overfit(cls, synth_classification(16, 64, kOverfitSeed), kClsBatch, kClsEpochs, kClsTarget);

  SASNetConfig seg;
  seg.width_divisor = 8;
  const auto b = overfit(seg, synth_segmentation(16, 64, kOverfitSeed), kSegBatch, kSegEpochs, kSegTarget);

  auto describe = [](const char* what, const OverfitRun& r, double target, std::size_t batch) {
    return fmt("%s %s %.2f at epoch %zu (best %.4f, batch %zu, lr %.0e, %.0fs)", what, r.reached ? "reached" : "missed",
               target, r.epoch, r.best, batch, kOverfitLr, r.seconds);
  };
  return {a.reached && b.reached,
          describe("SAETCN", a, kClsTarget, kClsBatch) + "; " + describe("SAS-Net", b, kSegTarget, kSegBatch)};
}

// ---- determinism & persistence ---------------------------------------------

Outcome determinism(const fs::path& work) {
  SAETCNConfig small;
  small.width_divisor = 16;
  small.enabled_modules = 2;
  const NetworkConfig cfg = small;
  const Dataset data = synth_classification(2, 32, 5);
  TrainPlan plan;
  plan.epochs = 3;
  plan.batch_size = 4;
  plan.seed = 21;

  auto run_full = [&] {
    auto state = initial_state(cfg, plan.seed, plan.lr);
    auto log = fit(cfg, data, plan, state);
    return std::make_pair(log, encode_checkpoint(to_checkpoint(state, cfg)));
  };
  const auto a = run_full();
  const auto b = run_full();
  const bool same = a.first == b.first && a.second == b.second;

  fs::create_directories(work);
  const auto first = work / "first.saek", second = work / "second.saek";
  write_file(first, a.second);
  save_checkpoint(second, load_checkpoint(first));
  const bool round_trip = read_file(first) == read_file(second);

  auto head_plan = plan;
  head_plan.epochs = 1;
  auto part = initial_state(cfg, plan.seed, plan.lr);
  fit(cfg, data, head_plan, part);
  save_checkpoint(work / "epoch1.saek", to_checkpoint(part, cfg));
  auto resumed = state_from_checkpoint(load_checkpoint(work / "epoch1.saek"), cfg);
  const auto tail = fit(cfg, data, plan, resumed);
  const bool resume_ok = tail.size() == 2 && tail[0] == a.first[1] && tail[1] == a.first[2] &&
                         encode_checkpoint(to_checkpoint(resumed, cfg)) == a.second;
  return {same && round_trip && resume_ok,
          fmt("identical reruns: %s; save-load-save bytes equal: %s (%zu bytes); resumed tail equal: %s",
              same ? "yes" : "no", round_trip ? "yes" : "no", a.second.size(), resume_ok ? "yes" : "no")};
}

// ---- ablation --------------------------------------------------------------

Outcome ablation() {
  const Dataset data = synth_classification(2, 64, 11);
  std::string detail;
  bool ok = true;
  const char* names[] = {"NCA", "+TriSAE", "+QuadSAE", "+HexaSAE", "+Fusion"};
  for (std::size_t m = 0; m <= 4; ++m) {
    std::string status = "ok";
    try {
      SAETCNConfig full;
      full.enabled_modules = m;
      const Summary s = summarize(full, 224, 224);
      if (s.output != Shape{1, 4}) throw ShapeError("full-width output " + to_string(s.output));

      SAETCNConfig c = full;
      c.width_divisor = 8;
      auto state = initial_state(c, m, 1e-4);
      std::vector<std::size_t> idx{0, 1, 2, 3};
      const Tensor logits = infer(c, state.params, stack_images(data, idx));
      if (logits.shape() != Shape{4, 4} || !logits.all_finite()) throw NumericError("bad forward output");
      TrainPlan plan;
      plan.epochs = 1;
      plan.batch_size = 4;
      const auto log = fit(c, data, plan, state);
      if (log.size() != 1 || !std::isfinite(log[0].loss)) throw NumericError("smoke epoch failed");
      status = fmt("%zu SAEB", s.count_kind("SAEB"));
    } catch (const std::exception& e) {
      ok = false;
      status = std::string("error: ") + e.what();
    }
    detail += fmt("%s%s [%s]", m ? "; " : "", names[m], status.c_str());
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string work = "acceptance_run";
  std::vector<std::string> only;
  app.add_option("--work", work, "Scratch directory")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient-suite", gradient_suite},
      {"architecture-census", census},
      {"esim-wiring", esim_wiring},
      {"loss-oracles", loss_oracles},
      {"metric-oracles", metric_oracles},
      {"adam-reference", adam_reference},
      {"overfit-sanity", overfit_sanity},
      {"determinism-persistence", [&] { return determinism(fs::path(work) / "determinism"); }},
      {"ablation-constructability", ablation},
  };

  int failures = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome r;
    try {
      r = check();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failures += !r.pass;
    std::cout << (r.pass ? "PASS " : "FAIL ") << name << ": " << r.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
