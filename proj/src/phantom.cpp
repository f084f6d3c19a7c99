#include "dgseg/phantom.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dgseg/rng.hpp"

namespace dgseg {

void PhantomSpec::validate() const {
  if (grid_shape.nx < 8 || grid_shape.ny < 8 || grid_shape.nz < 8)
    throw std::invalid_argument("phantom grid too small (need >= 8 per axis)");
  if (n_ellipsoids < 1) throw std::invalid_argument("n_ellipsoids must be >= 1");
  if (center_noise_sigma < 0) throw std::invalid_argument("center_noise_sigma must be >= 0");
  if (bias_field_strength < 0) throw std::invalid_argument("bias_field_strength must be >= 0");
  if (!(contrast_gap > 0)) throw std::invalid_argument("contrast_gap must be > 0");
  if (boundary_suppression < 0 || boundary_suppression > 1)
    throw std::invalid_argument("boundary_suppression must be in [0,1]");
  for (double s : spacing)
    if (!(s > 0)) throw std::invalid_argument("spacing must be positive");
}

namespace {

struct Ellipsoid {
  double cx, cy, cz;
  double ax, ay, az;
};

// Chain of overlapping ellipsoids drifting along x, jittered in y/z.
std::vector<Ellipsoid> draw_organ(const Shape3& g, int n, Rng& rng) {
  std::vector<Ellipsoid> es;
  es.reserve(std::size_t(n));
  double ax = g.nx * rng.uniform(0.14, 0.20);
  double ay = g.ny * rng.uniform(0.09, 0.13);
  double az = g.nz * rng.uniform(0.10, 0.14);
  double cx = g.nx * (0.5 - 0.018 * (n - 1) * g.nx / 32.0) + rng.uniform(-1.5, 1.5);
  double cy = g.ny * 0.5 + rng.uniform(-0.06, 0.06) * g.ny;
  double cz = g.nz * 0.5 + rng.uniform(-0.06, 0.06) * g.nz;
  double drift_y = rng.uniform(-0.25, 0.25);
  for (int i = 0; i < n; ++i) {
    es.push_back({cx, cy, cz, ax, ay, az});
    cx += ax * rng.uniform(0.6, 0.9);
    cy += ay * drift_y + rng.uniform(-0.5, 0.5);
    cz += rng.uniform(-0.4, 0.4);
    ax *= rng.uniform(0.8, 1.0);
    ay *= rng.uniform(0.85, 1.05);
    az *= rng.uniform(0.85, 1.05);
  }
  return es;
}

bool inside_any(const std::vector<Ellipsoid>& es, int x, int y, int z) {
  for (const auto& e : es) {
    const double dx = (x - e.cx) / e.ax;
    const double dy = (y - e.cy) / e.ay;
    const double dz = (z - e.cz) / e.az;
    if (dx * dx + dy * dy + dz * dz <= 1.0) return true;
  }
  return false;
}

// Low-frequency multiplicative field in [1-strength, 1+strength], keyed on the
// center name so one center's cases share the same systematic shading.
struct BiasField {
  double amp;
  double fx[3], fy[3], fz[3], ph[3], c[3];

  static BiasField make(double strength, std::uint64_t center_key) {
    BiasField b{};
    b.amp = strength;
    Rng rng(derive_seed(center_key, hash_string("bias_field")));
    double csum = 0;
    for (int m = 0; m < 3; ++m) {
      b.fx[m] = rng.uniform(-1.5, 1.5);
      b.fy[m] = rng.uniform(-1.5, 1.5);
      b.fz[m] = rng.uniform(-1.5, 1.5);
      b.ph[m] = rng.uniform(0, 2 * M_PI);
      b.c[m] = rng.uniform(0.3, 1.0);
      csum += b.c[m];
    }
    for (int m = 0; m < 3; ++m) b.c[m] /= csum;
    return b;
  }

  double at(double u, double v, double w) const {
    double f = 0;
    for (int m = 0; m < 3; ++m)
      f += c[m] * std::cos(2 * M_PI * (fx[m] * u + fy[m] * v + fz[m] * w) + ph[m]);
    return 1.0 + amp * f;
  }
};

}  // namespace

PhantomCase make_phantom(const PhantomSpec& spec, const DomainTag& tag, std::uint64_t seed) {
  spec.validate();
  if (!tag.consistent())
    throw std::invalid_argument("domain tag phase/role inconsistent for center " + tag.center);
  if (tag.phase != spec.phase)
    throw std::invalid_argument("phantom spec phase disagrees with domain tag");

  const Shape3 g = spec.grid_shape;
  const std::int64_t total = g.voxels();
  const std::int64_t lo = std::max<std::int64_t>(1, total / 1000);  // 0.1%
  const std::int64_t hi = total / 10;                               // 10%
  const double background = 1.0;
  const BiasField bias = BiasField::make(spec.bias_field_strength, hash_string(tag.center));

  for (int attempt = 0; attempt < 10; ++attempt) {
    Rng geom(derive_seed(seed, hash_string("organ"), std::uint64_t(attempt)));
    const auto organ = draw_organ(g, spec.n_ellipsoids, geom);

    SegMask mask = make_mask(g, spec.spacing, "");
    std::int64_t count = 0;
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y)
        for (int x = 0; x < g.nx; ++x)
          if (inside_any(organ, x, y, z)) {
            mask.at(x, y, z) = 1;
            ++count;
          }
    if (count < lo || count > hi) continue;

    // 1-voxel boundary shell: organ voxels with a background 6-neighbor
    std::vector<std::uint8_t> shell(std::size_t(total), 0);
    if (spec.phase == Phase::out_of_phase) {
      constexpr int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
      for (int z = 0; z < g.nz; ++z)
        for (int y = 0; y < g.ny; ++y)
          for (int x = 0; x < g.nx; ++x) {
            if (!mask.at(x, y, z)) continue;
            for (const auto& o : off) {
              const Index3 q{x + o[0], y + o[1], z + o[2]};
              if (!in_bounds(g, q) || !mask.at(q.x, q.y, q.z)) {
                shell[std::size_t(flat_index(g, x, y, z))] = 1;
                break;
              }
            }
          }
    }

    const double organ_value = spec.phase == Phase::venous ? background + spec.contrast_gap
                                                           : background - spec.contrast_gap;
    const double shell_value = organ_value - spec.boundary_suppression * spec.contrast_gap;

    Volume vol = make_volume(g, spec.spacing, "");
    double organ_sum = 0, bg_sum = 0;
    for (int z = 0; z < g.nz; ++z)
      for (int y = 0; y < g.ny; ++y)
        for (int x = 0; x < g.nx; ++x) {
          const std::int64_t i = flat_index(g, x, y, z);
          double base = background;
          if (mask.data[std::size_t(i)])
            base = shell[std::size_t(i)] ? shell_value : organ_value;
          const double b = bias.at(double(x) / g.nx, double(y) / g.ny, double(z) / g.nz);
          const double val = base * b;
          vol.data[std::size_t(i)] = float(val);
          (mask.data[std::size_t(i)] ? organ_sum : bg_sum) += val;
        }

    // Contract check on the pre-noise image: bias shading must not flip the
    // organ/background contrast sign for this draw.
    const double organ_mean = organ_sum / double(count);
    const double bg_mean = bg_sum / double(total - count);
    const bool sign_ok = spec.phase == Phase::venous ? organ_mean > bg_mean : organ_mean < bg_mean;
    if (!sign_ok) continue;

    if (spec.center_noise_sigma > 0) {
      Rng noise(derive_seed(seed, hash_string("noise")));
      for (auto& v : vol.data) v = float(double(v) + noise.normal(0.0, spec.center_noise_sigma));
    }

    PhantomCase out;
    out.volume = std::move(vol);
    out.mask = std::move(mask);
    out.tag = tag;
    return out;
  }
  throw std::runtime_error("phantom generation failed after 10 attempts (organ fraction or contrast constraint)");
}

}  // namespace dgseg
