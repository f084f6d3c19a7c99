#include "dgseg/fh.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dgseg {

void FHParams::validate() const {
  if (!(k > 0)) throw std::invalid_argument("FH: k must be > 0");
  if (min_size < 1) throw std::invalid_argument("FH: min_size must be >= 1");
  if (connectivity != 6 && connectivity != 26)
    throw std::invalid_argument("FH: connectivity must be 6 or 26");
  if (smoothing_sigma < 0) throw std::invalid_argument("FH: smoothing_sigma must be >= 0");
}

std::vector<double> gaussian_smooth(const std::vector<double>& data, const Shape3& shape,
                                    double sigma) {
  if (sigma <= 0) return data;
  const int r = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(std::size_t(2 * r + 1));
  double ksum = 0;
  for (int i = -r; i <= r; ++i) {
    kernel[std::size_t(i + r)] = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
    ksum += kernel[std::size_t(i + r)];
  }
  for (auto& w : kernel) w /= ksum;

  std::vector<double> a = data, b(data.size());
  const int dims[3] = {shape.nx, shape.ny, shape.nz};
  const std::int64_t strides[3] = {1, shape.nx, std::int64_t(shape.nx) * shape.ny};

  for (int axis = 0; axis < 3; ++axis) {
    const int n = dims[axis];
    const std::int64_t stride = strides[axis];
    for (int z = 0; z < shape.nz; ++z)
      for (int y = 0; y < shape.ny; ++y)
        for (int x = 0; x < shape.nx; ++x) {
          const int pos[3] = {x, y, z};
          const std::int64_t base = flat_index(shape, x, y, z);
          double acc = 0;
          for (int i = -r; i <= r; ++i) {
            const int q = std::clamp(pos[axis] + i, 0, n - 1);
            acc += kernel[std::size_t(i + r)] * a[std::size_t(base + (q - pos[axis]) * stride)];
          }
          b[std::size_t(base)] = acc;
        }
    std::swap(a, b);
  }
  return a;
}

namespace {

struct Edge {
  double w;
  std::int32_t a, b;
};

struct UnionFind {
  std::vector<std::int32_t> parent;
  std::vector<std::int32_t> size;

  explicit UnionFind(std::int32_t n) : parent(std::size_t(n)), size(std::size_t(n), 1) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  std::int32_t find(std::int32_t x) {
    while (parent[std::size_t(x)] != x) {
      parent[std::size_t(x)] = parent[std::size_t(parent[std::size_t(x)])];
      x = parent[std::size_t(x)];
    }
    return x;
  }
  std::int32_t join(std::int32_t a, std::int32_t b) {
    if (size[std::size_t(a)] < size[std::size_t(b)]) std::swap(a, b);
    parent[std::size_t(b)] = a;
    size[std::size_t(a)] += size[std::size_t(b)];
    return a;
  }
};

std::vector<Edge> build_edges(const std::vector<double>& z, const Shape3& s, int connectivity) {
  std::vector<std::array<int, 3>> offsets;
  if (connectivity == 6) {
    offsets = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  } else {
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const bool positive = dz > 0 || (dz == 0 && dy > 0) || (dz == 0 && dy == 0 && dx > 0);
          if (positive) offsets.push_back({dx, dy, dz});
        }
  }

  std::vector<Edge> edges;
  edges.reserve(std::size_t(s.voxels()) * offsets.size());
  for (int zc = 0; zc < s.nz; ++zc)
    for (int yc = 0; yc < s.ny; ++yc)
      for (int xc = 0; xc < s.nx; ++xc) {
        const std::int32_t a = std::int32_t(flat_index(s, xc, yc, zc));
        for (const auto& o : offsets) {
          const Index3 q{xc + o[0], yc + o[1], zc + o[2]};
          if (!in_bounds(s, q)) continue;
          const std::int32_t b = std::int32_t(flat_index(s, q.x, q.y, q.z));
          edges.push_back({std::abs(z[std::size_t(a)] - z[std::size_t(b)]), a, b});
        }
      }
  return edges;
}

}  // namespace

LabelVolume fh_segment(const Volume& v, const FHParams& p) {
  p.validate();
  const std::int64_t n64 = v.shape.voxels();
  if (n64 == 0 || n64 > INT32_MAX) throw std::invalid_argument("FH: bad volume size");
  const std::int32_t n = std::int32_t(n64);
  for (float x : v.data)
    if (!std::isfinite(x)) throw std::invalid_argument("FH: volume has non-finite values");

  // z-score so k is scale-free; constant volumes keep all-zero weights
  std::vector<double> z(v.data.begin(), v.data.end());
  double mean = 0;
  for (double x : z) mean += x;
  mean /= double(n);
  double var = 0;
  for (double x : z) var += (x - mean) * (x - mean);
  var /= double(n);
  const double sd = std::sqrt(var);
  if (sd > 0)
    for (auto& x : z) x = (x - mean) / sd;
  else
    std::fill(z.begin(), z.end(), 0.0);

  z = gaussian_smooth(z, v.shape, p.smoothing_sigma);

  auto edges = build_edges(z, v.shape, p.connectivity);
  std::sort(edges.begin(), edges.end(), [](const Edge& l, const Edge& r) {
    if (l.w != r.w) return l.w < r.w;
    if (l.a != r.a) return l.a < r.a;
    return l.b < r.b;
  });

  UnionFind uf(n);
  // threshold[root] = Int(C) + tau(C); Int starts at 0, tau(singleton) = k
  std::vector<double> threshold(std::size_t(n), p.k);
  for (const auto& e : edges) {
    std::int32_t a = uf.find(e.a);
    std::int32_t b = uf.find(e.b);
    if (a == b) continue;
    if (e.w <= threshold[std::size_t(a)] && e.w <= threshold[std::size_t(b)]) {
      const std::int32_t root = uf.join(a, b);
      threshold[std::size_t(root)] = e.w + p.k / double(uf.size[std::size_t(root)]);
    }
  }

  // Small-component pass: edges are still sorted, so each undersized
  // component merges across its smallest-weight boundary edge first.
  if (p.min_size > 1) {
    for (const auto& e : edges) {
      const std::int32_t a = uf.find(e.a);
      const std::int32_t b = uf.find(e.b);
      if (a != b && (uf.size[std::size_t(a)] < p.min_size || uf.size[std::size_t(b)] < p.min_size))
        uf.join(a, b);
    }
  }

  LabelVolume lv;
  lv.shape = v.shape;
  lv.spacing = v.spacing;
  lv.labels.assign(std::size_t(n), -1);
  std::vector<std::int32_t> dense(std::size_t(n), -1);
  std::int32_t next = 0;
  for (std::int32_t i = 0; i < n; ++i) {
    const std::int32_t root = uf.find(i);
    if (dense[std::size_t(root)] < 0) dense[std::size_t(root)] = next++;
    lv.labels[std::size_t(i)] = dense[std::size_t(root)];
  }
  lv.n_regions = next;
  return lv;
}

SegMask region_of_point(const LabelVolume& lv, const Index3& point) {
  if (!in_bounds(lv.shape, point))
    throw std::invalid_argument("region_of_point: point out of bounds");
  const std::int32_t label = lv.at(point.x, point.y, point.z);
  SegMask m = make_mask(lv.shape, lv.spacing, "");
  for (std::size_t i = 0; i < lv.labels.size(); ++i) m.data[i] = lv.labels[i] == label ? 1 : 0;
  return m;
}

}  // namespace dgseg
