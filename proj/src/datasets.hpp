#pragma once

#include <string>

#include "oracle.hpp"

namespace selfe {

/// Procedurally built preset mixtures. All presets are exact Gaussian
/// mixtures so the data sampler and the closed-form oracle share one
/// definition.
///
///   gmm-4class   4 classes x 2 components on a ring of radius 2
///   checkerboard 2 classes tiling a 4x4 grid of cells over [-2, 2]^2
///   two-spirals  2 classes of beads along interleaved spiral arms
oracle::GmmCond make_preset(const std::string& name);

bool is_known_preset(const std::string& name);

}  // namespace selfe
