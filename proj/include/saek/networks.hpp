#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "saek/blocks.hpp"

namespace saek {

/// One serial group of SAE blocks. The first block maps in_ch -> out_ch
/// (stride 2 for every group after the first), the rest out_ch -> out_ch.
struct ModulePlan {
  std::string name;
  std::size_t blocks = 1;
  std::size_t in_ch = 64;
  std::size_t out_ch = 256;
};

std::vector<ModulePlan> default_module_plan();

/// Classification network: NCAB stem, the module plan, adaptive average
/// pooling, and a two-layer dense head producing logits.
struct SAETCNConfig {
  std::size_t num_classes = 4;
  std::size_t in_channels = 3;
  std::size_t stem_out = 64;
  std::vector<ModulePlan> module_plan = default_module_plan();
  std::size_t head_hidden = 2048;
  /// Every channel count (not num_classes / in_channels) is divided by this.
  std::size_t width_divisor = 1;
  /// Number of leading module_plan entries that are built (ablation).
  std::size_t enabled_modules = 4;

  std::size_t scaled(std::size_t channels) const;
  std::size_t saeb_count() const;
  void validate() const;
};

/// Segmentation network: SAEB encoder with 2x2 max pooling between stages
/// and an SFD decoder where stage n consumes encoder stage k - n.
struct SASNetConfig {
  std::size_t num_out_channels = 4;
  std::size_t in_channels = 3;
  std::vector<std::size_t> encoder{64, 128, 256, 512, 1024};
  std::vector<std::size_t> decoder{512, 256, 128, 64};
  std::size_t width_divisor = 1;

  std::size_t scaled(std::size_t channels) const;
  /// Input extents must be divisible by this (2^(stages - 1)).
  std::size_t size_multiple() const;
  void validate() const;
};

using NetworkConfig = std::variant<SAETCNConfig, SASNetConfig>;

std::string arch_name(const NetworkConfig& config);
bool is_classifier(const NetworkConfig& config);
/// Logit count (classes) or logit-map count (segmentation).
std::size_t output_channels(const NetworkConfig& config);

nlohmann::json to_json(const NetworkConfig& config);
/// Strict parse: unknown fields and inconsistent channel plans are rejected
/// with ValidationError.
NetworkConfig config_from_json(const nlohmann::json& doc);
NetworkConfig default_config(const std::string& arch);

template <typename T>
Var<T> saetcn_forward(Graph<T>& g, const Var<T>& x, const SAETCNConfig& config);

template <typename T>
Var<T> sasnet_forward(Graph<T>& g, const Var<T>& x, const SASNetConfig& config);

template <typename T>
Var<T> network_forward(Graph<T>& g, const Var<T>& x, const NetworkConfig& config);

/// Smallest valid input extent, used for shape-only passes.
std::size_t probe_extent(const NetworkConfig& config);

/// Parameter layout of the network with every tensor zero.
template <typename T>
ParamStore<T> declare_params(const NetworkConfig& config);

/// Conv/linear weights ~ U(-b, b) with b = sqrt(6 / fan_in); biases 0;
/// BN gamma 1, beta 0, running mean 0, running var 1. Draws follow
/// declaration order from one splitmix64 stream.
template <typename T>
ParamStore<T> init_params(const NetworkConfig& config, std::uint64_t seed);

/// The init_params rule applied to an already declared store.
template <typename T>
void init_store(ParamStore<T>& store, std::uint64_t seed);

std::size_t count_params(const NetworkConfig& config);

struct Summary {
  Shape input;
  Shape output;
  std::vector<LayerRecord> layers;
  std::size_t total_params = 0;

  std::size_t count_kind(const std::string& kind) const;
  std::string render() const;
};

/// Shape-only pass over a 1 x C x height x width probe input.
Summary summarize(const NetworkConfig& config, std::size_t height, std::size_t width);

}  // namespace saek
