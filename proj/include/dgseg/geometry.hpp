#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>

namespace dgseg {

struct Shape3 {
  int nx = 0, ny = 0, nz = 0;

  std::int64_t voxels() const { return std::int64_t(nx) * ny * nz; }
  bool operator==(const Shape3&) const = default;
};

struct Index3 {
  int x = 0, y = 0, z = 0;
  bool operator==(const Index3&) const = default;
};

// Axis-aligned voxel box, inclusive lo / exclusive hi.
struct Box3 {
  Index3 lo;
  Index3 hi;

  bool empty() const { return hi.x <= lo.x || hi.y <= lo.y || hi.z <= lo.z; }
  bool contains(const Index3& p) const {
    return p.x >= lo.x && p.x < hi.x && p.y >= lo.y && p.y < hi.y &&
           p.z >= lo.z && p.z < hi.z;
  }
};

inline std::int64_t flat_index(const Shape3& s, int x, int y, int z) {
  return std::int64_t(x) + std::int64_t(s.nx) * (std::int64_t(y) + std::int64_t(s.ny) * z);
}

inline Index3 unflatten(const Shape3& s, std::int64_t i) {
  const int x = int(i % s.nx);
  const int y = int((i / s.nx) % s.ny);
  const int z = int(i / (std::int64_t(s.nx) * s.ny));
  return {x, y, z};
}

inline bool in_bounds(const Shape3& s, const Index3& p) {
  return p.x >= 0 && p.x < s.nx && p.y >= 0 && p.y < s.ny && p.z >= 0 && p.z < s.nz;
}

using Spacing = std::array<double, 3>;

}  // namespace dgseg
