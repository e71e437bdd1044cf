#include "saek/train.hpp"

#include <cstdio>
#include <numeric>

#include "saek/losses.hpp"
#include "saek/rng.hpp"

namespace saek {

const char* to_string(LossKind kind) { return kind == LossKind::cross_entropy ? "cross_entropy" : "bce_logits"; }

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "cross_entropy") return LossKind::cross_entropy;
  if (s == "bce_logits") return LossKind::bce_logits;
  throw ValidationError("unknown loss '" + s + "' (expected cross_entropy or bce_logits)");
}

LossKind default_loss(const NetworkConfig& config) {
  return is_classifier(config) ? LossKind::cross_entropy : LossKind::bce_logits;
}

void TrainPlan::validate(const NetworkConfig& config) const {
  if (batch_size == 0) throw ValidationError("batch_size must be >= 1");
  if (loss_kind != default_loss(config)) {
    throw ValidationError(std::string("loss ") + to_string(loss_kind) + " does not match the " + arch_name(config) +
                          " head");
  }
  if (!(lr >= 0.0)) throw ValidationError("learning rate must be >= 0");
}

std::string log_csv_header() { return "epoch,loss,accuracy"; }

std::string log_csv_line(const EpochLog& e) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g", e.epoch, e.loss, e.accuracy);
  return buf;
}

std::string log_csv(const std::vector<EpochLog>& log) {
  std::string out = log_csv_header() + "\n";
  for (const auto& e : log) out += log_csv_line(e) + "\n";
  return out;
}

TrainState initial_state(const NetworkConfig& config, std::uint64_t seed, double lr) {
  TrainState s{init_params<float>(config, seed), AdamState{}, 0};
  s.adam.lr = lr;
  return s;
}

Checkpoint to_checkpoint(const TrainState& state, const NetworkConfig& config) {
  return make_checkpoint(state.params, &state.adam, to_json(config).dump(), state.epoch);
}

TrainState state_from_checkpoint(const Checkpoint& ckpt, const NetworkConfig& config) {
  TrainState s{declare_params<float>(config), AdamState{}, ckpt.epoch.value_or(0)};
  restore_params(ckpt, s.params);
  if (ckpt.adam) {
    s.adam = *ckpt.adam;
    for (const auto* moments : {&s.adam.m, &s.adam.v}) {
      for (const auto& [name, t] : *moments) {
        if (!s.params.contains(name) || s.params.get(name).shape() != t.shape()) {
          throw ValidationError("optimizer state for '" + name + "' does not match the network");
        }
      }
    }
  }
  return s;
}

Tensor stack_images(const Dataset& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ValidationError("empty batch");
  const Shape& s = data.samples.at(indices[0]).image.shape();
  const std::size_t per = numel(s);
  Tensor out(Shape{indices.size(), s[0], s[1], s[2]});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = data.samples.at(indices[i]).image;
    if (img.shape() != s) throw ShapeError("images in one batch differ in shape");
    std::copy(img.data().begin(), img.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

Tensor one_hot_masks(const Dataset& data, const std::vector<std::size_t>& indices, std::size_t channels) {
  const std::size_t h = data.samples.at(indices[0]).image.dim(1);
  const std::size_t w = data.samples.at(indices[0]).image.dim(2);
  Tensor out(Shape{indices.size(), channels, h, w});
  auto d = out.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& mask = data.samples.at(indices[i]).mask;
    if (mask.size() != h * w) throw ShapeError("sample mask does not match the image extents");
    for (std::size_t p = 0; p < h * w; ++p) {
      if (mask[p] >= channels) throw ValidationError("mask class " + std::to_string(mask[p]) + " >= output channels");
      d[(i * channels + mask[p]) * h * w + p] = 1.0f;
    }
  }
  return out;
}

std::vector<std::size_t> argmax_classes(const Tensor& logits) {
  const Shape& s = logits.shape();
  const auto d = logits.data();
  std::vector<std::size_t> out;
  if (s.size() == 2) {
    out.resize(s[0]);
    for (std::size_t i = 0; i < s[0]; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < s[1]; ++j)
        if (d[i * s[1] + j] > d[i * s[1] + best]) best = j;
      out[i] = best;
    }
    return out;
  }
  if (s.size() != 4) throw ShapeError("argmax_classes expects N x C or N x C x H x W, got " + to_string(s));
  const std::size_t plane = s[2] * s[3];
  out.resize(s[0] * plane);
  for (std::size_t n = 0; n < s[0]; ++n) {
    const float* base = d.data() + n * s[1] * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < s[1]; ++c)
        if (base[c * plane + p] > base[best * plane + p]) best = c;
      out[n * plane + p] = best;
    }
  }
  return out;
}

Tensor infer(const NetworkConfig& config, ParamStore<float>& params, const Tensor& images, std::size_t batch) {
  if (images.rank() != 4) throw ShapeError("infer expects N x C x H x W images, got " + to_string(images.shape()));
  const std::size_t n = images.dim(0);
  const std::size_t per = images.size() / n;
  std::vector<float> out;
  Shape out_shape;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t count = std::min(batch, n - start);
    Shape s = images.shape();
    s[0] = count;
    std::vector<float> chunk(images.data().begin() + static_cast<std::ptrdiff_t>(start * per),
                             images.data().begin() + static_cast<std::ptrdiff_t>((start + count) * per));
    Tape<float> tape;
    tape.set_grad_enabled(false);
    Graph<float> g(tape, params, nn::Mode::eval);
    const Var<float> y = network_forward(g, g.input(Tensor(s, std::move(chunk))), config);
    if (out_shape.empty()) {
      out_shape = y.shape();
      out_shape[0] = n;
    }
    out.insert(out.end(), y.value().data().begin(), y.value().data().end());
  }
  return Tensor(out_shape, std::move(out));
}

std::vector<EpochLog> fit(const NetworkConfig& config, const Dataset& data, const TrainPlan& plan, TrainState& state,
                          const EpochCallback& on_epoch) {
  plan.validate(config);
  if (data.samples.empty()) throw ValidationError("training set is empty");
  const bool classify = is_classifier(config);
  if (classify != (data.kind == TaskKind::classification)) {
    throw ValidationError(std::string("dataset kind ") + to_string(data.kind) + " does not fit arch " +
                          arch_name(config));
  }
  const std::size_t classes = output_channels(config);
  const std::string config_text = to_json(config).dump();
  state.adam.lr = plan.lr;

  std::vector<EpochLog> log;
  const std::size_t n = data.samples.size();
  for (std::size_t epoch = state.epoch + 1; epoch <= plan.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (plan.shuffle) {
      SplitMix64 rng(derive_seed(plan.seed, epoch));
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    for (std::size_t start = 0, batch_no = 0; start < n; start += plan.batch_size, ++batch_no) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + plan.batch_size)));
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no);
      try {
        Tape<float> tape;
        Graph<float> g(tape, state.params, nn::Mode::train);
        const Var<float> logits = network_forward(g, g.input(stack_images(data, idx)), config);
        Var<float> loss;
        std::vector<std::size_t> truth;
        if (classify) {
          for (auto i : idx) truth.push_back(data.samples[i].label);
          loss = cross_entropy(logits, truth);
        } else {
          for (auto i : idx) truth.insert(truth.end(), data.samples[i].mask.begin(), data.samples[i].mask.end());
          loss = bce_with_logits(logits, one_hot_masks(data, idx, classes));
        }
        const double value = loss.value()[0];
        if (!std::isfinite(value)) throw NumericError("loss is non-finite (" + std::to_string(value) + ")");
        loss_sum += value * static_cast<double>(idx.size());
        const auto pred = argmax_classes(logits.value());
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
        total += pred.size();
        const Gradients<float> grads = tape.backward(loss);
        adam_step(state.params, g.param_grads(grads), state.adam);
      } catch (const NumericError& e) {
        throw NumericError(where + ": " + e.what());
      }
    }
    state.epoch = epoch;
    EpochLog entry{epoch, loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(total)};
    log.push_back(entry);
    if (plan.checkpoint_every != 0 && epoch % plan.checkpoint_every == 0 && !plan.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04zu.saek", epoch);
      save_checkpoint(plan.checkpoint_dir / name, make_checkpoint(state.params, &state.adam, config_text, epoch));
    }
    if (on_epoch && !on_epoch(entry, state)) break;
  }
  return log;
}

}  // namespace saek
