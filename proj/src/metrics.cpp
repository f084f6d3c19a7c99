#include "dgseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dgseg {

std::string flags_to_string(MetricFlag f) {
  std::string out;
  auto add = [&out](const char* name) {
    if (!out.empty()) out += "|";
    out += name;
  };
  if (has_flag(f, MetricFlag::empty_pred)) add("empty_pred");
  if (has_flag(f, MetricFlag::empty_gt)) add("empty_gt");
  if (has_flag(f, MetricFlag::both_empty)) add("both_empty");
  if (has_flag(f, MetricFlag::surface_sentinel)) add("surface_sentinel");
  return out.empty() ? "-" : out;
}

OverlapMetrics overlap_metrics(const SegMask& pred, const SegMask& gt) {
  if (pred.shape != gt.shape)
    throw std::invalid_argument("overlap_metrics: shape mismatch");

  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0;
    const bool g = gt.data[i] != 0;
    tp += (p && g);
    fp += (p && !g);
    fn += (!p && g);
  }

  OverlapMetrics m;
  const bool pred_empty = (tp + fp) == 0;
  const bool gt_empty = (tp + fn) == 0;
  if (pred_empty && gt_empty) {
    m.dice = m.jaccard = m.precision = m.recall = 1.0;
    m.flags = MetricFlag::both_empty;
    return m;
  }
  if (pred_empty) {
    m.precision = 1.0;  // no positive claims, none wrong
    m.flags = MetricFlag::empty_pred;
    return m;
  }
  if (gt_empty) {
    m.recall = 1.0;
    m.flags = MetricFlag::empty_gt;
    return m;
  }
  m.dice = 2.0 * double(tp) / double(2 * tp + fp + fn);
  m.jaccard = double(tp) / double(tp + fp + fn);
  m.precision = double(tp) / double(tp + fp);
  m.recall = double(tp) / double(tp + fn);
  return m;
}

double grid_diagonal_mm(const Shape3& shape, const Spacing& spacing) {
  const double dx = shape.nx * spacing[0];
  const double dy = shape.ny * spacing[1];
  const double dz = shape.nz * spacing[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of empty set");
  std::sort(values.begin(), values.end());
  const double h = (double(values.size()) - 1.0) * q / 100.0;
  const std::size_t lo = std::size_t(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  const double frac = h - double(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

namespace {

// 1D squared-distance lower envelope (Felzenszwalb/Huttenlocher) over sample
// positions x_i = i * s.
void dt1d(std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
          std::vector<double>& zb, int n, double s) {
  int k = 0;
  v[0] = 0;
  zb[0] = -std::numeric_limits<double>::infinity();
  zb[1] = std::numeric_limits<double>::infinity();
  auto x = [s](int i) { return double(i) * s; };
  for (int q = 1; q < n; ++q) {
    double sep;
    for (;;) {
      const int p = v[k];
      sep = ((f[std::size_t(q)] + x(q) * x(q)) - (f[std::size_t(p)] + x(p) * x(p))) /
            (2.0 * (x(q) - x(p)));
      if (sep > zb[std::size_t(k)]) break;
      --k;
    }
    ++k;
    v[std::size_t(k)] = q;
    zb[std::size_t(k)] = sep;
    zb[std::size_t(k) + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (zb[std::size_t(k) + 1] < x(q)) ++k;
    const int p = v[std::size_t(k)];
    const double dx = x(q) - x(p);
    d[std::size_t(q)] = dx * dx + f[std::size_t(p)];
  }
}

std::vector<std::uint8_t> surface_voxels(const SegMask& m) {
  std::vector<std::uint8_t> surf(m.data.size(), 0);
  constexpr int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (int z = 0; z < m.shape.nz; ++z)
    for (int y = 0; y < m.shape.ny; ++y)
      for (int x = 0; x < m.shape.nx; ++x) {
        if (!m.at(x, y, z)) continue;
        for (const auto& o : off) {
          const Index3 q{x + o[0], y + o[1], z + o[2]};
          if (!in_bounds(m.shape, q) || !m.at(q.x, q.y, q.z)) {
            surf[std::size_t(flat_index(m.shape, x, y, z))] = 1;
            break;
          }
        }
      }
  return surf;
}

std::vector<double> directed_distances(const std::vector<std::uint8_t>& from_surface,
                                       const std::vector<double>& sq_dt_to_other,
                                       const Shape3& shape) {
  std::vector<double> out;
  for (std::int64_t i = 0; i < shape.voxels(); ++i)
    if (from_surface[std::size_t(i)]) out.push_back(std::sqrt(sq_dt_to_other[std::size_t(i)]));
  return out;
}

}  // namespace

std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& seed,
                                               const Shape3& shape, const Spacing& spacing) {
  if (std::int64_t(seed.size()) != shape.voxels())
    throw std::invalid_argument("distance transform: seed/shape mismatch");
  constexpr double kInf = 1e30;
  std::vector<double> d(seed.size());
  for (std::size_t i = 0; i < seed.size(); ++i) d[i] = seed[i] ? 0.0 : kInf;

  const auto maxn = std::size_t(std::max({shape.nx, shape.ny, shape.nz}));
  std::vector<double> f(maxn);
  std::vector<double> row(maxn);
  std::vector<int> v(maxn);
  std::vector<double> zb(maxn + 1);

  // x pass
  for (int z = 0; z < shape.nz; ++z)
    for (int y = 0; y < shape.ny; ++y) {
      for (int x = 0; x < shape.nx; ++x) f[std::size_t(x)] = d[std::size_t(flat_index(shape, x, y, z))];
      dt1d(f, row, v, zb, shape.nx, spacing[0]);
      for (int x = 0; x < shape.nx; ++x) d[std::size_t(flat_index(shape, x, y, z))] = row[std::size_t(x)];
    }
  // y pass
  for (int z = 0; z < shape.nz; ++z)
    for (int x = 0; x < shape.nx; ++x) {
      for (int y = 0; y < shape.ny; ++y) f[std::size_t(y)] = d[std::size_t(flat_index(shape, x, y, z))];
      dt1d(f, row, v, zb, shape.ny, spacing[1]);
      for (int y = 0; y < shape.ny; ++y) d[std::size_t(flat_index(shape, x, y, z))] = row[std::size_t(y)];
    }
  // z pass
  for (int y = 0; y < shape.ny; ++y)
    for (int x = 0; x < shape.nx; ++x) {
      for (int z = 0; z < shape.nz; ++z) f[std::size_t(z)] = d[std::size_t(flat_index(shape, x, y, z))];
      dt1d(f, row, v, zb, shape.nz, spacing[2]);
      for (int z = 0; z < shape.nz; ++z) d[std::size_t(flat_index(shape, x, y, z))] = row[std::size_t(z)];
    }
  return d;
}

SurfaceMetrics surface_metrics(const SegMask& pred, const SegMask& gt, const Spacing& spacing) {
  if (pred.shape != gt.shape)
    throw std::invalid_argument("surface_metrics: shape mismatch");
  for (double s : spacing)
    if (!(s > 0)) throw std::invalid_argument("surface_metrics: spacing must be positive");

  SurfaceMetrics m;
  const bool pred_empty = pred.foreground_count() == 0;
  const bool gt_empty = gt.foreground_count() == 0;
  if (pred_empty || gt_empty) {
    m.hd95_mm = m.assd_mm = grid_diagonal_mm(pred.shape, spacing);
    m.flags = MetricFlag::surface_sentinel;
    if (pred_empty) m.flags = m.flags | MetricFlag::empty_pred;
    if (gt_empty) m.flags = m.flags | MetricFlag::empty_gt;
    if (pred_empty && gt_empty) m.flags = m.flags | MetricFlag::both_empty;
    return m;
  }

  const auto pred_surf = surface_voxels(pred);
  const auto gt_surf = surface_voxels(gt);
  const auto dt_pred = squared_distance_transform(pred_surf, pred.shape, spacing);
  const auto dt_gt = squared_distance_transform(gt_surf, gt.shape, spacing);

  std::vector<double> dists = directed_distances(pred_surf, dt_gt, pred.shape);
  const std::vector<double> back = directed_distances(gt_surf, dt_pred, gt.shape);
  dists.insert(dists.end(), back.begin(), back.end());

  m.hd95_mm = percentile_linear(dists, 95.0);
  double sum = 0;
  for (double x : dists) sum += x;
  m.assd_mm = sum / double(dists.size());
  return m;
}

CaseMetrics evaluate_case(const SegMask& pred, const SegMask& gt, const DomainTag& tag) {
  const OverlapMetrics o = overlap_metrics(pred, gt);
  const SurfaceMetrics s = surface_metrics(pred, gt, gt.spacing);
  CaseMetrics c;
  c.case_id = gt.case_id;
  c.center = tag.center;
  c.phase = tag.phase;
  c.dice = o.dice;
  c.jaccard = o.jaccard;
  c.precision = o.precision;
  c.recall = o.recall;
  c.hd95_mm = s.hd95_mm;
  c.assd_mm = s.assd_mm;
  c.flags = o.flags | s.flags;
  return c;
}

namespace {

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  if (v.empty()) {
    mean = sd = 0;
    return;
  }
  double sum = 0;
  for (double x : v) sum += x;
  mean = sum / double(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / double(v.size()));  // population std
}

}  // namespace

SummaryStats aggregate(const std::vector<CaseMetrics>& cases, bool include_sentinels) {
  if (cases.empty()) throw std::invalid_argument("aggregate: empty case list");
  std::vector<double> dice, jac, prec, rec, hd, assd;
  for (const auto& c : cases) {
    dice.push_back(c.dice);
    jac.push_back(c.jaccard);
    prec.push_back(c.precision);
    rec.push_back(c.recall);
    if (include_sentinels || !has_flag(c.flags, MetricFlag::surface_sentinel)) {
      hd.push_back(c.hd95_mm);
      assd.push_back(c.assd_mm);
    }
  }
  SummaryStats s;
  s.n_cases = int(cases.size());
  mean_std(dice, s.dice_mean, s.dice_std);
  mean_std(jac, s.jaccard_mean, s.jaccard_std);
  mean_std(prec, s.precision_mean, s.precision_std);
  mean_std(rec, s.recall_mean, s.recall_std);
  mean_std(hd, s.hd95_mean, s.hd95_std);
  mean_std(assd, s.assd_mean, s.assd_std);
  return s;
}

std::string metrics_csv_header() {
  return "case_id,center,phase,dice,jaccard,precision,recall,hd95_mm,assd_mm,flags";
}

std::string metrics_csv_row(const CaseMetrics& c) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << c.case_id << ',' << c.center << ',' << to_string(c.phase) << ',' << c.dice << ','
     << c.jaccard << ',' << c.precision << ',' << c.recall << ',' << c.hd95_mm << ','
     << c.assd_mm << ',' << flags_to_string(c.flags);
  return os.str();
}

}  // namespace dgseg
