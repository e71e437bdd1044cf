#include "saek/networks.hpp"

#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "saek/rng.hpp"

namespace saek {

using nlohmann::json;

std::vector<ModulePlan> default_module_plan() {
  return {{"TriSAE", 3, 64, 256}, {"QuadSAE", 4, 256, 512}, {"HexaSAE", 6, 512, 1024}, {"FinalFusion", 3, 1024, 2048}};
}

namespace {

std::size_t divide_channels(std::size_t channels, std::size_t divisor, const char* what) {
  if (divisor == 0) throw ValidationError("width divisor must be >= 1");
  if (channels % divisor != 0) {
    throw ValidationError(std::string(what) + ": " + std::to_string(channels) + " channels not divisible by width divisor " +
                          std::to_string(divisor));
  }
  return channels / divisor;
}

void require_quad(std::size_t channels, const std::string& what) {
  if (channels == 0 || channels % 4 != 0) {
    throw ValidationError(what + " must be a positive multiple of 4 after width scaling, got " +
                          std::to_string(channels));
  }
}

}  // namespace

std::size_t SAETCNConfig::scaled(std::size_t channels) const {
  return divide_channels(channels, width_divisor, "SAETCN");
}

std::size_t SAETCNConfig::saeb_count() const {
  std::size_t n = 0;
  for (std::size_t m = 0; m < enabled_modules && m < module_plan.size(); ++m) n += module_plan[m].blocks;
  return n;
}

void SAETCNConfig::validate() const {
  if (num_classes < 2) throw ValidationError("num_classes must be >= 2");
  if (in_channels == 0) throw ValidationError("in_channels must be >= 1");
  if (enabled_modules > module_plan.size()) {
    throw ValidationError("enabled_modules (" + std::to_string(enabled_modules) + ") exceeds the module plan");
  }
  require_quad(scaled(stem_out), "stem channels");
  if (scaled(head_hidden) == 0) throw ValidationError("head hidden width must be positive");
  std::size_t prev = stem_out;
  for (const auto& m : module_plan) {
    if (m.blocks == 0) throw ValidationError("module " + m.name + " needs at least one block");
    if (m.in_ch != prev) {
      throw ValidationError("channel plan violation: module " + m.name + " takes " + std::to_string(m.in_ch) +
                            " channels but receives " + std::to_string(prev));
    }
    require_quad(scaled(m.out_ch), "module " + m.name + " output");
    prev = m.out_ch;
  }
}

std::size_t SASNetConfig::scaled(std::size_t channels) const {
  return divide_channels(channels, width_divisor, "SAS-Net");
}

std::size_t SASNetConfig::size_multiple() const { return std::size_t{1} << (encoder.size() - 1); }

void SASNetConfig::validate() const {
  if (num_out_channels == 0) throw ValidationError("num_out_channels must be >= 1");
  if (in_channels == 0) throw ValidationError("in_channels must be >= 1");
  if (encoder.size() < 2) throw ValidationError("SAS-Net needs at least two encoder stages");
  if (decoder.size() + 1 != encoder.size()) {
    throw ValidationError("SAS-Net needs one decoder stage fewer than encoder stages (" +
                          std::to_string(encoder.size()) + " encoder, " + std::to_string(decoder.size()) + " decoder)");
  }
  for (auto c : encoder) require_quad(scaled(c), "encoder channels");
  for (auto c : decoder) require_quad(scaled(c), "decoder channels");
}

std::string arch_name(const NetworkConfig& config) {
  return std::holds_alternative<SAETCNConfig>(config) ? "saetcn" : "sasnet";
}

bool is_classifier(const NetworkConfig& config) { return std::holds_alternative<SAETCNConfig>(config); }

std::size_t output_channels(const NetworkConfig& config) {
  if (const auto* c = std::get_if<SAETCNConfig>(&config)) return c->num_classes;
  return std::get<SASNetConfig>(config).num_out_channels;
}

// ---- JSON ---------------------------------------------------------------------

namespace {

void reject_unknown(const json& doc, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!doc.is_object()) throw ValidationError(where + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : doc.items()) {
    if (!ok.count(key)) throw ValidationError("unknown field '" + key + "' in " + where);
  }
}

template <typename V>
V read(const json& doc, const char* key, V fallback) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("field '") + key + "': " + e.what());
  }
}

std::size_t read_width_divisor(const json& doc) {
  if (!doc.contains("width_scale")) return 1;
  const json& w = doc.at("width_scale");
  double scale = 0.0;
  if (w.is_number()) {
    scale = w.get<double>();
  } else if (w.is_string()) {
    const std::string s = w.get<std::string>();
    const auto slash = s.find('/');
    try {
      scale = slash == std::string::npos ? std::stod(s) : std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
    } catch (const std::exception&) {
      throw ValidationError("width_scale '" + s + "' is not a number or fraction");
    }
  } else {
    throw ValidationError("width_scale must be a number or a fraction string");
  }
  if (!(scale > 0.0) || scale > 1.0) throw ValidationError("width_scale must be in (0, 1]");
  const double inv = 1.0 / scale;
  const auto divisor = static_cast<std::size_t>(std::llround(inv));
  if (std::abs(inv - static_cast<double>(divisor)) > 1e-9) {
    throw ValidationError("width_scale must be 1/k for an integer k");
  }
  return divisor;
}

}  // namespace

json to_json(const NetworkConfig& config) {
  if (const auto* c = std::get_if<SAETCNConfig>(&config)) {
    json plan = json::array();
    json enabled = json::array();
    for (std::size_t i = 0; i < c->module_plan.size(); ++i) {
      const auto& m = c->module_plan[i];
      plan.push_back({{"name", m.name}, {"blocks", m.blocks}, {"in_ch", m.in_ch}, {"out_ch", m.out_ch}});
      if (i < c->enabled_modules) enabled.push_back(m.name);
    }
    return {{"arch", "saetcn"},
            {"num_classes", c->num_classes},
            {"in_channels", c->in_channels},
            {"stem", {{"out_ch", c->stem_out}}},
            {"module_plan", plan},
            {"head", {{"hidden", c->head_hidden}}},
            {"width_scale", 1.0 / static_cast<double>(c->width_divisor)},
            {"enabled_modules", enabled}};
  }
  const auto& c = std::get<SASNetConfig>(config);
  return {{"arch", "sasnet"},
          {"num_out_channels", c.num_out_channels},
          {"in_channels", c.in_channels},
          {"encoder", c.encoder},
          {"decoder", c.decoder},
          {"width_scale", 1.0 / static_cast<double>(c.width_divisor)}};
}

NetworkConfig config_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("arch") || !doc.at("arch").is_string()) {
    throw ValidationError("network config needs a string 'arch' field");
  }
  const std::string arch = doc.at("arch").get<std::string>();
  if (arch == "saetcn") {
    reject_unknown(doc,
                   {"arch", "num_classes", "in_channels", "stem", "module_plan", "head", "width_scale",
                    "enabled_modules"},
                   "saetcn config");
    SAETCNConfig c;
    c.num_classes = read<std::size_t>(doc, "num_classes", c.num_classes);
    c.in_channels = read<std::size_t>(doc, "in_channels", c.in_channels);
    if (doc.contains("stem")) {
      reject_unknown(doc.at("stem"), {"out_ch"}, "stem");
      c.stem_out = read<std::size_t>(doc.at("stem"), "out_ch", c.stem_out);
    }
    if (doc.contains("head")) {
      reject_unknown(doc.at("head"), {"hidden"}, "head");
      c.head_hidden = read<std::size_t>(doc.at("head"), "hidden", c.head_hidden);
    }
    if (doc.contains("module_plan")) {
      const json& plan = doc.at("module_plan");
      if (!plan.is_array()) throw ValidationError("module_plan must be an array");
      c.module_plan.clear();
      for (const auto& m : plan) {
        reject_unknown(m, {"name", "blocks", "in_ch", "out_ch"}, "module_plan entry");
        ModulePlan p;
        p.name = read<std::string>(m, "name", "");
        p.blocks = read<std::size_t>(m, "blocks", 1);
        p.in_ch = read<std::size_t>(m, "in_ch", 0);
        p.out_ch = read<std::size_t>(m, "out_ch", 0);
        c.module_plan.push_back(p);
      }
    }
    c.width_divisor = read_width_divisor(doc);
    c.enabled_modules = c.module_plan.size();
    if (doc.contains("enabled_modules")) {
      const auto names = read<std::vector<std::string>>(doc, "enabled_modules", {});
      if (names.size() > c.module_plan.size()) throw ValidationError("enabled_modules lists more modules than the plan");
      for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] != c.module_plan[i].name) {
          throw ValidationError("enabled_modules must be a prefix of module_plan; got '" + names[i] + "' at position " +
                                std::to_string(i));
        }
      }
      c.enabled_modules = names.size();
    }
    c.validate();
    return c;
  }
  if (arch == "sasnet") {
    reject_unknown(doc, {"arch", "num_out_channels", "in_channels", "encoder", "decoder", "width_scale"},
                   "sasnet config");
    SASNetConfig c;
    c.num_out_channels = read<std::size_t>(doc, "num_out_channels", c.num_out_channels);
    c.in_channels = read<std::size_t>(doc, "in_channels", c.in_channels);
    c.encoder = read<std::vector<std::size_t>>(doc, "encoder", c.encoder);
    c.decoder = read<std::vector<std::size_t>>(doc, "decoder", c.decoder);
    c.width_divisor = read_width_divisor(doc);
    c.validate();
    return c;
  }
  throw ValidationError("unknown arch '" + arch + "' (expected saetcn or sasnet)");
}

NetworkConfig default_config(const std::string& arch) {
  if (arch == "saetcn") return SAETCNConfig{};
  if (arch == "sasnet") return SASNetConfig{};
  throw ValidationError("unknown arch '" + arch + "' (expected saetcn or sasnet)");
}

// ---- forward --------------------------------------------------------------------

template <typename T>
Var<T> saetcn_forward(Graph<T>& g, const Var<T>& x, const SAETCNConfig& config) {
  config.validate();
  const Shape& s = x.shape();
  if (s.size() != 4 || s[2] < 32 || s[3] < 32) {
    throw ValidationError("SAETCN needs an N x C x H x W input with H, W >= 32, got " + to_string(s));
  }
  if (s[1] != config.in_channels) {
    throw ShapeError("SAETCN expects " + std::to_string(config.in_channels) + " input channels, got " + to_string(s));
  }
  Var<T> h;
  {
    auto scope = g.scope("stem");
    h = ncab_forward(g, x, NCABSpec{config.in_channels, config.scaled(config.stem_out)});
  }
  std::size_t channels = config.scaled(config.stem_out);
  for (std::size_t m = 0; m < config.enabled_modules; ++m) {
    const ModulePlan& plan = config.module_plan[m];
    auto module_scope = g.scope(plan.name);
    for (std::size_t b = 0; b < plan.blocks; ++b) {
      auto block_scope = g.scope(std::to_string(b));
      const std::size_t stride = (b == 0 && m > 0) ? 2 : 1;
      h = saeb_forward(g, h, SAEBSpec{channels, config.scaled(plan.out_ch), stride});
      channels = config.scaled(plan.out_ch);
    }
  }
  auto head = g.scope("head");
  h = g.flatten(g.adaptive_avgpool(h));
  h = g.relu(g.linear("fc1", h, LinearSpec{channels, config.scaled(config.head_hidden)}));
  return g.linear("fc2", h, LinearSpec{config.scaled(config.head_hidden), config.num_classes});
}

template <typename T>
Var<T> sasnet_forward(Graph<T>& g, const Var<T>& x, const SASNetConfig& config) {
  config.validate();
  const Shape& s = x.shape();
  const std::size_t multiple = config.size_multiple();
  if (s.size() != 4 || s[2] % multiple != 0 || s[3] % multiple != 0) {
    throw ValidationError("SAS-Net input extents must be divisible by " + std::to_string(multiple) + ", got " +
                          to_string(s));
  }
  if (s[1] != config.in_channels) {
    throw ShapeError("SAS-Net expects " + std::to_string(config.in_channels) + " input channels, got " + to_string(s));
  }
  const std::size_t stages = config.encoder.size();
  std::vector<Var<T>> skips;
  Var<T> h = x;
  std::size_t channels = config.in_channels;
  for (std::size_t k = 0; k < stages; ++k) {
    const std::string name = "enc" + std::to_string(k + 1);
    {
      auto scope = g.scope(name);
      if (k > 0) h = g.maxpool(h, nn::Window{2, 2, 2, 0});
      h = saeb_forward(g, h, SAEBSpec{channels, config.scaled(config.encoder[k]), 1});
    }
    channels = config.scaled(config.encoder[k]);
    h = g.tap(name + ".out", h);
    skips.push_back(g.tap(name + ".skip", h));
  }
  // Decoder stage n (1-based) consumes encoder stage `stages - n`.
  Var<T> d = h;
  for (std::size_t n = 1; n < stages; ++n) {
    auto scope = g.scope("sfd" + std::to_string(n));
    const Var<T> skip = g.tap("skip_in", skips[stages - n - 1]);
    d = sfd_forward(g, d, skip, SFDSpec{d.shape()[1], skip.shape()[1], config.scaled(config.decoder[n - 1])});
    d = g.tap("out", d);
  }
  return g.conv("head", d, Conv2dSpec{d.shape()[1], config.num_out_channels, 1, 1, 1, 0, true});
}

template <typename T>
Var<T> network_forward(Graph<T>& g, const Var<T>& x, const NetworkConfig& config) {
  if (const auto* c = std::get_if<SAETCNConfig>(&config)) return saetcn_forward(g, x, *c);
  return sasnet_forward(g, x, std::get<SASNetConfig>(config));
}

std::size_t probe_extent(const NetworkConfig& config) {
  if (std::holds_alternative<SAETCNConfig>(config)) return 32;
  return std::get<SASNetConfig>(config).size_multiple();
}

template <typename T>
ParamStore<T> declare_params(const NetworkConfig& config) {
  ParamStore<T> store;
  Tape<T> tape;
  Graph<T> g(tape, store, nn::Mode::eval, Graph<T>::Phase::declare);
  const std::size_t e = probe_extent(config);
  const std::size_t in_ch = std::visit([](const auto& c) { return c.in_channels; }, config);
  network_forward(g, g.input(TensorT<T>(Shape{1, in_ch, e, e})), config);
  return store;
}

template <typename T>
ParamStore<T> init_params(const NetworkConfig& config, std::uint64_t seed) {
  ParamStore<T> store = declare_params<T>(config);
  init_store(store, seed);
  return store;
}

template <typename T>
void init_store(ParamStore<T>& store, std::uint64_t seed) {
  SplitMix64 rng(seed);
  for (auto& e : store.entries()) {
    switch (e.kind) {
      case ParamKind::weight: {
        const double bound = std::sqrt(6.0 / static_cast<double>(e.fan_in));
        for (auto& v : e.value.data()) v = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
      case ParamKind::bn_gamma:
      case ParamKind::bn_running_var:
        for (auto& v : e.value.data()) v = T{1};
        break;
      case ParamKind::bias:
      case ParamKind::bn_beta:
      case ParamKind::bn_running_mean:
        break;
    }
  }
}

std::size_t count_params(const NetworkConfig& config) { return declare_params<float>(config).trainable_count(); }

std::size_t Summary::count_kind(const std::string& kind) const {
  std::size_t n = 0;
  for (const auto& l : layers)
    if (l.kind == kind) ++n;
  return n;
}

std::string Summary::render() const {
  std::ostringstream os;
  std::size_t width = 5;
  for (const auto& l : layers) width = std::max(width, l.name.size());
  os << std::left << std::setw(static_cast<int>(width) + 2) << "layer" << std::setw(18) << "kind" << std::setw(20)
     << "input" << std::setw(20) << "output"
     << "params\n";
  for (const auto& l : layers) {
    os << std::left << std::setw(static_cast<int>(width) + 2) << l.name << std::setw(18) << l.kind << std::setw(20)
       << to_string(l.in) << std::setw(20) << to_string(l.out) << l.params << '\n';
  }
  os << "input " << to_string(input) << " -> output " << to_string(output) << '\n';
  os << "SAEB blocks: " << count_kind("SAEB") << ", SFD blocks: " << count_kind("SFD") << '\n';
  os << "trainable parameters: " << total_params << '\n';
  return os.str();
}

Summary summarize(const NetworkConfig& config, std::size_t height, std::size_t width) {
  ParamStore<float> store;
  Tape<float> tape;
  Graph<float> g(tape, store, nn::Mode::eval, Graph<float>::Phase::declare);
  const std::size_t in_ch = std::visit([](const auto& c) { return c.in_channels; }, config);
  Summary s;
  s.input = Shape{1, in_ch, height, width};
  const Var<float> out = network_forward(g, g.input(Tensor(s.input)), config);
  s.output = out.shape();
  s.layers = g.records();
  s.total_params = store.trainable_count();
  return s;
}

#define SAEK_INSTANTIATE(T)                                                                 \
  template Var<T> saetcn_forward(Graph<T>&, const Var<T>&, const SAETCNConfig&);            \
  template Var<T> sasnet_forward(Graph<T>&, const Var<T>&, const SASNetConfig&);            \
  template Var<T> network_forward(Graph<T>&, const Var<T>&, const NetworkConfig&);          \
  template ParamStore<T> declare_params<T>(const NetworkConfig&);                           \
  template ParamStore<T> init_params<T>(const NetworkConfig&, std::uint64_t);                \
  template void init_store<T>(ParamStore<T>&, std::uint64_t);

SAEK_INSTANTIATE(float)
SAEK_INSTANTIATE(double)

#undef SAEK_INSTANTIATE

}  // namespace saek
