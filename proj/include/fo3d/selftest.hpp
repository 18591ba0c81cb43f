// Quick invariant checks runnable on any install, without test data.

#pragma once

#include <string>
#include <vector>

namespace fo3d {

struct SelftestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<SelftestResult> run_selftest();

}  // namespace fo3d
