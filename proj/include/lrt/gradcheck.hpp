#pragma once
// Finite-difference verification of every trainable layer family.

#include <cstdint>
#include <string>
#include <vector>

#include "lrt/autograd.hpp"

namespace lrt {

struct GradcheckResult {
  std::string family;
  FiniteDiffResult fd;
  double tolerance = 1e-5;
  std::vector<std::string> param_names;

  bool passed() const { return fd.max_rel_error < tolerance; }
  /// Name of the parameter holding the worst coordinate.
  std::string worst_name() const;
};

/// Families: LED, LRMHA, LRFF, frontend, loss, model (one encoder and one
/// decoder layer). All checks run in double precision with dims <= 8. Layer
/// families use tolerance 1e-5, the model 1e-4.
std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed, double eps);

}  // namespace lrt
