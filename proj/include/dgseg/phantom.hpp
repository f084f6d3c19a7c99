#pragma once

#include <cstdint>
#include <tuple>

#include "dgseg/volume.hpp"

namespace dgseg {

// Recipe for one synthetic abdominal phantom. The organ is a chain of
// overlapping ellipsoids, elongated like a pancreas; the phase transform and
// the center profile (noise + bias field) carry the domain shift.
struct PhantomSpec {
  Shape3 grid_shape{32, 32, 24};
  Spacing spacing{1.5, 1.5, 3.0};
  int n_ellipsoids = 3;
  double center_noise_sigma = 0.0;    // additive Gaussian, per-case
  double bias_field_strength = 0.0;   // multiplicative low-frequency field, per-center
  Phase phase = Phase::venous;
  double contrast_gap = 1.0;          // organ/background mean separation (pre-noise)
  double boundary_suppression = 0.0;  // out-of-phase rim darkening in [0,1]

  void validate() const;
};

struct PhantomCase {
  Volume volume;
  SegMask mask;
  DomainTag tag;
};

// Deterministic in (spec, tag, seed). The bias field pattern is keyed on
// tag.center so cases from one center share a systematic appearance, while
// organ geometry and noise are per-case. Venous: organ brighter than
// background by contrast_gap. Out-of-phase: contrast inverted (organ darker)
// plus a 1-voxel boundary shell darkened further by boundary_suppression.
// Organ volume fraction is kept in [0.1%, 10%] of the grid; after 10 failed
// attempts (fraction or pre-noise contrast-sign violation) an error is thrown.
PhantomCase make_phantom(const PhantomSpec& spec, const DomainTag& tag, std::uint64_t seed);

}  // namespace dgseg
