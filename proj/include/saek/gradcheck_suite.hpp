#pragma once

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "saek/autograd.hpp"

namespace saek {

struct SuiteCase {
  std::string group;
  std::string name;
  GradCheckReport report;
  double seconds = 0.0;
};

struct SuiteOptions {
  std::uint64_t seed = 1;
  /// Groups to run: "ops", "blocks", "saetcn", "sasnet". Empty runs all.
  std::set<std::string> groups;
  /// Coordinates sampled per tensor for blocks and networks (ops check all).
  std::size_t block_coords = 12;
  std::size_t network_coords = 3;
  double step = 1e-3;
  double tolerance = 1e-4;
};

/// Finite-difference checks over every layer op, NCAB, SAEB (stride 1 and
/// 2), SFD, and width-1/16 SAETCN and SAS-Net. Each case reduces its output
/// with a seeded random weighting; batch norm runs in train mode with the
/// running statistics frozen.
std::vector<SuiteCase> run_gradcheck_suite(const SuiteOptions& options,
                                           const std::function<void(const SuiteCase&)>& on_case = {});

}  // namespace saek
