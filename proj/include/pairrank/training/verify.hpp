#pragma once

#include <string>
#include <vector>

#include "pairrank/autodiff/gradcheck.hpp"

namespace pairrank::training {

struct OpCheck {
  std::string name;
  ad::GradCheckReport report;
};

/// Finite-difference checks of every differentiable op and of the full
/// training objectives (self-supervised, supervised, CSR) on a 4-pair batch.
std::vector<OpCheck> run_gradcheck_suite(double tol = 1e-4, double eps = 1e-5, std::uint64_t seed = 0);

}  // namespace pairrank::training
