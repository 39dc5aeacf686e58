#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pedkd/gradcheck.hpp"

namespace pedkd {

struct GradSuiteEntry {
  std::string name;
  GradCheckReport report;
};

inline constexpr double kGradSuiteTolerance = 1e-4;

/// Finite-difference checks of every trainable module at small sizes:
/// conv and attention students, MLP head, MoE gate, query ensemble and a
/// 40-step RNN rollout.
std::vector<GradSuiteEntry> gradient_suite(std::uint64_t seed);

bool suite_passes(const std::vector<GradSuiteEntry>& entries, double tolerance = kGradSuiteTolerance);

}  // namespace pedkd
