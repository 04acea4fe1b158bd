// Copyright 2026 The fedcache Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Finite-difference checks of every layer kind, run against the 64-bit
// build. The interface uses only standard types so it can be linked into
// binaries built on the 32-bit library.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace gradcheck {

struct CaseResult {
  std::string name;         // layer kind or composite model
  std::size_t coordinates;  // scalars compared
  double max_rel_error;
  double worst_analytic;
  double worst_numeric;
  bool passed;
};

/// Relative error |a - n| / max(|a|, |n|, kFloor).
inline constexpr double kFloor = 1e-5;

std::vector<CaseResult> run_suite(std::uint64_t seed, double tolerance = 1e-4, std::size_t min_coordinates = 100);

/// Names of every layer kind the engine defines.
std::vector<std::string> layer_kind_names();

/// True when the engine was built with 64-bit reals.
bool uses_double();

}  // namespace gradcheck
