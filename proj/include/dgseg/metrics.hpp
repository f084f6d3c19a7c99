#pragma once

#include <string>
#include <vector>

#include "dgseg/volume.hpp"

namespace dgseg {

enum class MetricFlag : unsigned {
  none = 0,
  empty_pred = 1u << 0,
  empty_gt = 1u << 1,
  both_empty = 1u << 2,
  surface_sentinel = 1u << 3,  // hd95/assd capped at the grid diagonal
};

inline MetricFlag operator|(MetricFlag a, MetricFlag b) {
  return MetricFlag(unsigned(a) | unsigned(b));
}
inline bool has_flag(MetricFlag set, MetricFlag f) { return (unsigned(set) & unsigned(f)) != 0; }
std::string flags_to_string(MetricFlag f);

struct OverlapMetrics {
  double dice = 0, jaccard = 0, precision = 0, recall = 0;
  MetricFlag flags = MetricFlag::none;
};

struct SurfaceMetrics {
  double hd95_mm = 0, assd_mm = 0;
  MetricFlag flags = MetricFlag::none;
};

struct CaseMetrics {
  std::string case_id;
  std::string center;
  Phase phase = Phase::venous;
  double dice = 0, jaccard = 0, precision = 0, recall = 0;
  double hd95_mm = 0, assd_mm = 0;
  MetricFlag flags = MetricFlag::none;
};

struct SummaryStats {
  int n_cases = 0;
  double dice_mean = 0, dice_std = 0;
  double jaccard_mean = 0, jaccard_std = 0;
  double precision_mean = 0, precision_std = 0;
  double recall_mean = 0, recall_std = 0;
  double hd95_mean = 0, hd95_std = 0;
  double assd_mean = 0, assd_std = 0;
};

// Voxel-count overlap ratios. Empty-mask conventions: both empty -> all four
// are 1; empty pred vs nonempty gt -> dice=jaccard=recall=0, precision=1;
// symmetric for empty gt. Flags record which convention fired.
OverlapMetrics overlap_metrics(const SegMask& pred, const SegMask& gt);

// Surface = foreground voxels with a background 6-neighbor (outside the grid
// counts as background). Directed distances are exact Euclidean mm between
// surface voxel centers via a spacing-aware distance transform; hd95 is the
// linear-interpolation 95th percentile and assd the mean, both over
// D(pred->gt) ++ D(gt->pred). Either mask empty -> both metrics are capped at
// the grid's physical diagonal and flagged.
SurfaceMetrics surface_metrics(const SegMask& pred, const SegMask& gt, const Spacing& spacing);

CaseMetrics evaluate_case(const SegMask& pred, const SegMask& gt, const DomainTag& tag);

// Per-metric mean and population std (divisor n). When include_sentinels is
// false, sentinel-valued cases are dropped from the hd95/assd aggregates only.
SummaryStats aggregate(const std::vector<CaseMetrics>& cases, bool include_sentinels = true);

// Squared Euclidean distance transform with anisotropic spacing: for every
// voxel, the squared mm distance to the nearest seed voxel center. Seeds are
// voxels where seed[i] != 0. Exposed for tests and prompt construction.
std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& seed,
                                               const Shape3& shape, const Spacing& spacing);

// Linear-interpolation percentile (q in [0,100]) of unsorted values.
double percentile_linear(std::vector<double> values, double q);

double grid_diagonal_mm(const Shape3& shape, const Spacing& spacing);

std::string metrics_csv_header();
std::string metrics_csv_row(const CaseMetrics& c);

}  // namespace dgseg
