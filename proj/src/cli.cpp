#include "saek/cli.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "saek/gradcheck_suite.hpp"
#include "saek/metrics.hpp"
#include "saek/train.hpp"

namespace saek {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Options that can come from the command line or a --run-config file.
class Fields {
 public:
  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& name, T& var, const std::string& desc) {
    CLI::Option* opt = nullptr;
    if constexpr (std::is_same_v<T, bool>) {
      opt = app->add_flag("--" + name, var, desc);
    } else {
      opt = app->add_option("--" + name, var, desc)->capture_default_str();
    }
    fields_.push_back(Field{name, opt, [&var](const json& j) { var = j.get<T>(); }, [&var] { return json(var); }});
    return opt;
  }

  /// Fills every option not given on the command line from `doc`.
  void apply(const json& doc) {
    if (!doc.is_object()) throw ValidationError("run config must be a JSON object");
    for (const auto& [key, value] : doc.items()) {
      auto it = std::find_if(fields_.begin(), fields_.end(), [&](const Field& f) { return f.name == key; });
      if (it == fields_.end()) throw ValidationError("unknown field '" + key + "' in run config");
      if (it->opt->count() > 0) continue;
      try {
        it->set(value);
      } catch (const json::exception& e) {
        throw ValidationError("run config field '" + key + "': " + e.what());
      }
    }
  }

  json resolved() const {
    json out = json::object();
    for (const auto& f : fields_) out[f.name] = f.get();
    return out;
  }

 private:
  struct Field {
    std::string name;
    CLI::Option* opt;
    std::function<void(const json&)> set;
    std::function<json()> get;
  };
  std::vector<Field> fields_;
};

struct Command {
  CLI::App* app = nullptr;
  Fields fields;
  std::string run_config;
};

json read_json(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

void write_run_json(const fs::path& out, const std::string& command, const json& resolved) {
  ensure_dir(out);
  write_text(out / "run.json", json{{"command", command}, {"config", resolved}}.dump(2) + "\n");
}

/// Network config from an optional file, an optional arch, and an optional
/// width-scale override.
NetworkConfig resolve_network(const std::string& config_path, const std::string& arch, const std::string& width) {
  json doc;
  if (!config_path.empty()) {
    doc = read_json(config_path);
    if (!arch.empty() && doc.value("arch", "") != arch) {
      throw ValidationError("--arch " + arch + " conflicts with config arch '" + doc.value("arch", "") + "'");
    }
  } else {
    doc = to_json(default_config(arch.empty() ? "saetcn" : arch));
  }
  if (!width.empty()) doc["width_scale"] = width;
  return config_from_json(doc);
}

NetworkConfig checkpoint_network(const Checkpoint& ckpt, const std::string& config_path) {
  if (ckpt.config_json.empty()) throw ValidationError("checkpoint has no embedded network config");
  json embedded;
  try {
    embedded = json::parse(ckpt.config_json);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("embedded config is not valid JSON: ") + e.what());
  }
  const NetworkConfig config = config_from_json(embedded);
  if (!config_path.empty() && to_json(config_from_json(read_json(config_path))) != to_json(config)) {
    throw ValidationError("checkpoint/config mismatch: '" + config_path + "' differs from the embedded config");
  }
  return config;
}

void prepare(Dataset& data, std::size_t resize, Normalize mode) {
  for (auto& s : data.samples) {
    const std::size_t h = s.image.dim(1), w = s.image.dim(2);
    s.image = preprocess(s.image, resize, mode);
    if (resize != 0 && !s.mask.empty()) s.mask = resize_nearest(s.mask, h, w, resize, resize);
  }
}

Dataset select(const LoadedDataset& loaded, const std::string& split) {
  if (split == "all") return loaded.data;
  if (split == "train") return subset(loaded.data, loaded.split.train);
  if (split == "test") return subset(loaded.data, loaded.split.test);
  throw ValidationError("unknown split '" + split + "' (expected train, test or all)");
}

std::vector<double> softmax_rows(const Tensor& logits) {
  const TensorT<double> p = nn::softmax(logits.cast<double>());
  std::vector<double> out(p.data().begin(), p.data().end());
  return out;
}

// ---- commands -------------------------------------------------------------------

struct GenData {
  std::string kind = "cls";
  std::size_t n = 16;
  std::size_t size = 64;
  std::uint64_t seed = 0;
  std::string out = ".";

  void run(const json& resolved, std::ostream& os) const {
    const TaskKind k = task_kind_from_string(kind);
    Dataset d = k == TaskKind::classification ? synth_classification(n, size, seed) : synth_segmentation(n, size, seed);
    std::vector<std::size_t> labels;
    for (const auto& s : d.samples) labels.push_back(s.label);
    const Split split =
        split_80_20(d.samples.size(), seed, k == TaskKind::classification ? &labels : nullptr);
    write_dataset(out, d, split, json{{"kind", kind}, {"n", n}, {"size", size}, {"seed", seed}});
    write_run_json(out, "gen-data", resolved);
    os << "wrote " << d.samples.size() << " samples (" << split.train.size() << " train, " << split.test.size()
       << " test) to " << out << "\n";
  }
};

struct TrainCmd {
  std::string arch;
  std::string config;
  std::string width_scale;
  std::string data;
  std::string split = "train";
  std::size_t epochs = 1;
  std::size_t batch = 8;
  std::uint64_t seed = 0;
  double lr = 1e-4;
  std::size_t checkpoint_every = 0;
  std::string resume;
  std::string preprocess = "none";
  std::size_t resize = 0;
  bool no_shuffle = false;
  std::string out = ".";

  void run(const json& resolved, std::ostream& os) const {
    if (data.empty()) throw ValidationError("train needs --data");
    NetworkConfig net;
    TrainState state;
    if (!resume.empty()) {
      const Checkpoint ckpt = load_checkpoint(resume);
      net = checkpoint_network(ckpt, config);
      if (!arch.empty() && arch_name(net) != arch) throw ValidationError("--arch conflicts with the checkpoint");
      state = state_from_checkpoint(ckpt, net);
    } else {
      net = resolve_network(config, arch, width_scale);
      state = initial_state(net, seed, lr);
    }
    const LoadedDataset loaded = load_dataset(data);
    Dataset train = select(loaded, split);
    prepare(train, resize, normalize_from_string(preprocess));

    TrainPlan plan;
    plan.epochs = epochs;
    plan.batch_size = batch;
    plan.seed = seed;
    plan.shuffle = !no_shuffle;
    plan.loss_kind = default_loss(net);
    plan.checkpoint_every = checkpoint_every;
    plan.checkpoint_dir = out;
    plan.lr = lr;
    ensure_dir(out);
    write_text(fs::path(out) / "config.json", to_json(net).dump(2) + "\n");
    write_run_json(out, "train", resolved);

    std::ofstream csv(fs::path(out) / "log.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write log.csv in '" + out + "'");
    csv << log_csv_header() << "\n";
    os << log_csv_header() << "\n";
    fit(net, train, plan, state, [&](const EpochLog& e, const TrainState&) {
      csv << log_csv_line(e) << "\n" << std::flush;
      os << log_csv_line(e) << "\n" << std::flush;
      return true;
    });
    save_checkpoint(fs::path(out) / "final.saek", to_checkpoint(state, net));
  }
};

struct EvalCmd {
  std::string checkpoint;
  std::string config;
  std::string data;
  std::string split = "test";
  std::string preprocess = "none";
  std::size_t resize = 0;
  std::size_t batch = 16;
  std::string out = ".";

  void run(const json& resolved, std::ostream& os) const {
    if (checkpoint.empty() || data.empty()) throw ValidationError("eval needs --checkpoint and --data");
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    const NetworkConfig net = checkpoint_network(ckpt, config);
    TrainState state = state_from_checkpoint(ckpt, net);
    Dataset d = select(load_dataset(data), split);
    if (d.samples.empty()) throw ValidationError("split '" + split + "' is empty");
    prepare(d, resize, normalize_from_string(preprocess));
    std::vector<std::size_t> all(d.samples.size());
    std::iota(all.begin(), all.end(), 0);
    const Tensor logits = infer(net, state.params, stack_images(d, all), batch);
    const std::size_t classes = output_channels(net);

    json report;
    std::string table;
    if (is_classifier(net)) {
      std::vector<std::size_t> labels;
      for (const auto& s : d.samples) labels.push_back(s.label);
      const auto probs = softmax_rows(logits);
      const ClassificationReport r = classification_report(probs, labels, classes);
      report = to_json(r);
      table = render_table(r);
    } else {
      const std::size_t h = logits.dim(2), w = logits.dim(3);
      std::vector<std::size_t> truth;
      for (const auto& s : d.samples) truth.insert(truth.end(), s.mask.begin(), s.mask.end());
      const auto pred = argmax_classes(logits);
      std::vector<double> scores(logits.size());
      for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));
      const MaskBatch p{pred, d.samples.size(), h, w};
      const MaskBatch t{truth, d.samples.size(), h, w};
      const SegmentationReport r = seg_metrics(p, t, classes, 2, scores);
      report = to_json(r);
      table = render_table(r);
    }
    ensure_dir(out);
    write_text(fs::path(out) / "report.json", report.dump(2) + "\n");
    write_text(fs::path(out) / "report.txt", table);
    write_run_json(out, "eval", resolved);
    os << table;
  }
};

struct PredictCmd {
  std::string checkpoint;
  std::string config;
  std::string image;
  std::string preprocess = "none";
  std::size_t resize = 0;
  std::string mask_out;
  std::string out = ".";

  void run(const json& resolved, std::ostream& os) const {
    if (checkpoint.empty() || image.empty()) throw ValidationError("predict needs --checkpoint and --image");
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    const NetworkConfig net = checkpoint_network(ckpt, config);
    TrainState state = state_from_checkpoint(ckpt, net);
    const Tensor gray = read_pgm(image, PgmMode::image);
    const std::size_t h = gray.dim(0), w = gray.dim(1);
    Tensor rgb(Shape{3, h, w});
    for (std::size_t c = 0; c < 3; ++c) std::copy(gray.data().begin(), gray.data().end(), rgb.data().begin() + c * h * w);
    const Tensor x = saek::preprocess(rgb, resize, normalize_from_string(preprocess));
    const Tensor batch = x.reshape(Shape{1, x.dim(0), x.dim(1), x.dim(2)});
    const Tensor logits = infer(net, state.params, batch, 1);
    json result;
    if (is_classifier(net)) {
      const auto probs = softmax_rows(logits);
      const auto best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      result = {{"image", image}, {"probabilities", probs}, {"class", best}};
      for (std::size_t c = 0; c < probs.size(); ++c) os << "class " << c << ": " << probs[c] << "\n";
      os << "predicted class " << best << "\n";
    } else {
      const auto pred = argmax_classes(logits);
      Tensor mask(Shape{logits.dim(2), logits.dim(3)});
      for (std::size_t i = 0; i < pred.size(); ++i) mask[i] = static_cast<float>(pred[i]);
      const fs::path dest = mask_out.empty() ? fs::path(out) / (fs::path(image).stem().string() + "_mask.pgm")
                                             : fs::path(mask_out);
      ensure_dir(dest.has_parent_path() ? dest.parent_path() : fs::path("."));
      write_pgm(dest, mask, PgmMode::mask);
      result = {{"image", image}, {"mask", dest.string()}};
      os << "wrote predicted mask " << dest.string() << "\n";
    }
    write_run_json(out, "predict", resolved);
    write_text(fs::path(out) / "prediction.json", result.dump(2) + "\n");
  }
};

struct GradcheckCmd {
  std::string arch = "all";
  std::uint64_t seed = 1;
  std::size_t block_coords = 12;
  std::size_t network_coords = 3;
  std::string out = ".";

  void run(const json& resolved, std::ostream& os) const {
    SuiteOptions o;
    o.seed = seed;
    o.block_coords = block_coords;
    o.network_coords = network_coords;
    if (arch == "saetcn") o.groups = {"ops", "blocks", "saetcn"};
    else if (arch == "sasnet") o.groups = {"ops", "blocks", "sasnet"};
    else if (arch == "ops" || arch == "blocks") o.groups = {arch};
    else if (arch != "all") throw ValidationError("--arch must be all, saetcn, sasnet, ops or blocks");
    json cases = json::array();
    bool ok = true;
    run_gradcheck_suite(o, [&](const SuiteCase& c) {
      const bool pass = c.report.passed();
      ok = ok && pass;
      char line[160];
      std::snprintf(line, sizeof line, "%-4s %-8s %-28s max_rel=%.3e checked=%zu skipped=%zu %.2fs\n",
                    pass ? "PASS" : "FAIL", c.group.c_str(), c.name.c_str(), c.report.max_rel_error(),
                    c.report.checked(), c.report.skipped(), c.seconds);
      os << line << std::flush;
      json entries = json::array();
      for (const auto& e : c.report.entries) {
        entries.push_back({{"name", e.name}, {"max_rel_error", e.max_rel_error}, {"checked", e.checked},
                           {"skipped", e.skipped}, {"non_finite", e.non_finite}, {"passed", e.passed}});
      }
      cases.push_back({{"group", c.group}, {"name", c.name}, {"passed", pass}, {"seconds", c.seconds},
                       {"entries", std::move(entries)}});
    });
    ensure_dir(out);
    write_text(fs::path(out) / "gradcheck.json", json{{"passed", ok}, {"cases", cases}}.dump(2) + "\n");
    write_run_json(out, "gradcheck", resolved);
    if (!ok) throw NumericError("gradient check failed");
  }
};

struct SummaryCmd {
  std::string arch;
  std::string config;
  std::string width_scale;
  std::size_t size = 0;
  std::string out;

  void run(const json& resolved, std::ostream& os) const {
    const NetworkConfig net = resolve_network(config, arch, width_scale);
    const std::size_t extent = size != 0 ? size : (is_classifier(net) ? 224 : 64);
    const Summary s = summarize(net, extent, extent);
    os << s.render();
    if (!out.empty()) write_run_json(out, "summary", resolved);
  }
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale SAETCN / SAS-Net toolkit", "saek"};
  app.require_subcommand(1);

  GenData gen;
  TrainCmd train;
  EvalCmd eval;
  PredictCmd predict;
  GradcheckCmd grad;
  SummaryCmd summary;
  std::vector<std::pair<Command, std::function<void(const json&)>>> commands;
  auto command = [&](const char* name, const char* desc) -> Command& {
    commands.emplace_back();
    Command& c = commands.back().first;
    c.app = app.add_subcommand(name, desc);
    c.app->add_option("--run-config", c.run_config, "JSON file of option values; flags take precedence");
    return c;
  };
  commands.reserve(6);

  {
    Command& c = command("gen-data", "Write a synthetic PGM dataset and manifest");
    c.fields.add(c.app, "kind", gen.kind, "cls or seg")->check(CLI::IsMember({"cls", "seg"}));
    c.fields.add(c.app, "n", gen.n, "Samples per class (cls) or samples (seg)");
    c.fields.add(c.app, "size", gen.size, "Image side in pixels");
    c.fields.add(c.app, "seed", gen.seed, "Generator seed");
    c.fields.add(c.app, "out", gen.out, "Output directory");
    commands.back().second = [&](const json& r) { gen.run(r, out); };
  }
  {
    Command& c = command("train", "Train a network on a dataset");
    c.fields.add(c.app, "arch", train.arch, "saetcn or sasnet");
    c.fields.add(c.app, "config", train.config, "Network config JSON");
    c.fields.add(c.app, "width-scale", train.width_scale, "Channel width scale, e.g. 1/8");
    c.fields.add(c.app, "data", train.data, "Dataset directory or manifest");
    c.fields.add(c.app, "split", train.split, "train, test or all");
    c.fields.add(c.app, "epochs", train.epochs, "Total epochs");
    c.fields.add(c.app, "batch", train.batch, "Batch size");
    c.fields.add(c.app, "seed", train.seed, "Init and shuffle seed");
    c.fields.add(c.app, "lr", train.lr, "Adam learning rate");
    c.fields.add(c.app, "checkpoint-every", train.checkpoint_every, "Checkpoint period in epochs (0 = off)");
    c.fields.add(c.app, "resume", train.resume, "Checkpoint to resume from");
    c.fields.add(c.app, "preprocess", train.preprocess, "none, minmax01 or zscore");
    c.fields.add(c.app, "resize", train.resize, "Resize images to this side (0 = keep)");
    c.fields.add(c.app, "no-shuffle", train.no_shuffle, "Keep dataset order");
    c.fields.add(c.app, "out", train.out, "Output directory");
    commands.back().second = [&](const json& r) { train.run(r, out); };
  }
  {
    Command& c = command("eval", "Evaluate a checkpoint and write the metric report");
    c.fields.add(c.app, "checkpoint", eval.checkpoint, "SAEK checkpoint");
    c.fields.add(c.app, "config", eval.config, "Network config to compare with the checkpoint");
    c.fields.add(c.app, "data", eval.data, "Dataset directory or manifest");
    c.fields.add(c.app, "split", eval.split, "train, test or all");
    c.fields.add(c.app, "preprocess", eval.preprocess, "none, minmax01 or zscore");
    c.fields.add(c.app, "resize", eval.resize, "Resize images to this side (0 = keep)");
    c.fields.add(c.app, "batch", eval.batch, "Inference batch size");
    c.fields.add(c.app, "out", eval.out, "Output directory");
    commands.back().second = [&](const json& r) { eval.run(r, out); };
  }
  {
    Command& c = command("predict", "Class probabilities or a predicted mask for one image");
    c.fields.add(c.app, "checkpoint", predict.checkpoint, "SAEK checkpoint");
    c.fields.add(c.app, "config", predict.config, "Network config to compare with the checkpoint");
    c.fields.add(c.app, "image", predict.image, "P5 PGM image");
    c.fields.add(c.app, "preprocess", predict.preprocess, "none, minmax01 or zscore");
    c.fields.add(c.app, "resize", predict.resize, "Resize to this side (0 = keep)");
    c.fields.add(c.app, "mask-out", predict.mask_out, "Predicted mask path (segmentation)");
    c.fields.add(c.app, "out", predict.out, "Output directory");
    commands.back().second = [&](const json& r) { predict.run(r, out); };
  }
  {
    Command& c = command("gradcheck", "Run the finite-difference gradient suite");
    c.fields.add(c.app, "arch", grad.arch, "all, saetcn, sasnet, ops or blocks");
    c.fields.add(c.app, "seed", grad.seed, "Seed for inputs and sampled coordinates");
    c.fields.add(c.app, "block-coords", grad.block_coords, "Coordinates checked per tensor in blocks");
    c.fields.add(c.app, "network-coords", grad.network_coords, "Coordinates checked per tensor in networks");
    c.fields.add(c.app, "out", grad.out, "Output directory");
    commands.back().second = [&](const json& r) { grad.run(r, out); };
  }
  {
    Command& c = command("summary", "Print the layer table and parameter count");
    c.fields.add(c.app, "arch", summary.arch, "saetcn or sasnet");
    c.fields.add(c.app, "config", summary.config, "Network config JSON");
    c.fields.add(c.app, "width-scale", summary.width_scale, "Channel width scale, e.g. 1/8");
    c.fields.add(c.app, "size", summary.size, "Probe input side (0 = 224 for saetcn, 64 for sasnet)");
    c.fields.add(c.app, "out", summary.out, "Directory for run.json (empty = none)");
    commands.back().second = [&](const json& r) { summary.run(r, out); };
  }

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    try {
      app.parse(argv);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? 0 : 1;
    }
    for (auto& [c, fn] : commands) {
      if (!c.app->parsed()) continue;
      if (!c.run_config.empty()) c.fields.apply(read_json(c.run_config));
      fn(c.fields.resolved());
    }
    return 0;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace saek
