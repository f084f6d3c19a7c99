#pragma once

#include <cstdint>
#include <vector>

#include "dgseg/volume.hpp"

namespace dgseg {

// Dense integer partition of a grid: every voxel carries exactly one label in
// [0, n_regions) and every label occurs.
struct LabelVolume {
  Shape3 shape;
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<std::int32_t> labels;
  int n_regions = 0;

  std::int32_t at(int x, int y, int z) const { return labels[flat_index(shape, x, y, z)]; }
};

struct FHParams {
  double k = 50.0;             // scale of the merge threshold tau(C) = k / |C|
  int min_size = 64;           // post-pass floor on region size, voxels
  int connectivity = 6;        // 6 or 26
  double smoothing_sigma = 0.8;  // Gaussian pre-smoothing, voxel units

  void validate() const;
};

// Graph-based greedy segmentation on the voxel lattice. The volume is
// z-scored (when non-constant) so k is scale-free, then Gaussian-smoothed
// when smoothing_sigma > 0. Edges carry |z(u)-z(v)| between neighbors and are
// processed in non-decreasing weight with (weight, a, b) tie-break, merging when
//   w <= min(Int(C1) + k/|C1|, Int(C2) + k/|C2|)
// where Int(C) is the largest MST edge inside C. Components below min_size
// are then merged across their smallest-weight boundary edge. Labels are
// dense, in first-voxel scan order; output is deterministic.
LabelVolume fh_segment(const Volume& v, const FHParams& p);

// Binary mask of all voxels sharing the label at `point`.
SegMask region_of_point(const LabelVolume& lv, const Index3& point);

// Separable Gaussian smoothing in voxel units (clamped boundary). Exposed for
// reuse; sigma <= 0 returns the input untouched.
std::vector<double> gaussian_smooth(const std::vector<double>& data, const Shape3& shape,
                                    double sigma);

}  // namespace dgseg
