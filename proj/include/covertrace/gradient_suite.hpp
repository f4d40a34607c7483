#pragma once

#include "covertrace/optimization.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace covertrace {

struct GradientSuiteEntry {
  std::string name;
  GradCheckReport report;
  double tolerance = 0.0;
  int rejected = 0;  // probes redrawn because the stencil straddled a kink
};

// Central-difference checks of every hand-written backward pass on a small
// random scene: refraction, field traversal, pixel rendering, the photometric
// loss and the normal-consistency loss. Each entry draws `probes` random
// (configuration, parameter) pairs. Entries whose analytic gradient is below
// `floor` are compared absolutely, since central differences cannot resolve
// them relative to an O(1) loss. Rendered losses are only piecewise smooth
// (trilinear interpolation has slope kinks on voxel-centre planes), so patch
// probes whose +-step stencil crosses a kink are redrawn and counted.
std::vector<GradientSuiteEntry> gradient_suite(std::uint64_t seed, int probes = 100,
                                               double step = 1e-5, double tolerance = 1e-4,
                                               double floor = 1e-6);

}  // namespace covertrace
