#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dgseg/geometry.hpp"

namespace dgseg {

enum class Phase { venous, out_of_phase };
enum class DomainRole { source, target1, target2 };

std::string to_string(Phase p);
std::string to_string(DomainRole r);
Phase phase_from_string(const std::string& s);
DomainRole role_from_string(const std::string& s);

// Domain identity of a case: acquisition center plus sequence phase.
struct DomainTag {
  std::string center;
  Phase phase = Phase::venous;
  DomainRole role = DomainRole::source;

  // target2 is the cross-phase domain; everything else is venous.
  bool consistent() const {
    if (role == DomainRole::target2) return phase == Phase::out_of_phase;
    return phase == Phase::venous;
  }
};

// 3D scalar image with anisotropic voxel spacing in mm.
struct Volume {
  Shape3 shape;
  Spacing spacing{1.0, 1.0, 1.0};
  std::string case_id;
  std::vector<float> data;

  float& at(int x, int y, int z) { return data[flat_index(shape, x, y, z)]; }
  float at(int x, int y, int z) const { return data[flat_index(shape, x, y, z)]; }
};

// Binary mask paired with a Volume (same shape and spacing).
struct SegMask {
  Shape3 shape;
  Spacing spacing{1.0, 1.0, 1.0};
  std::string case_id;
  std::vector<std::uint8_t> data;

  std::uint8_t& at(int x, int y, int z) { return data[flat_index(shape, x, y, z)]; }
  std::uint8_t at(int x, int y, int z) const { return data[flat_index(shape, x, y, z)]; }
  std::int64_t foreground_count() const;
};

Volume make_volume(Shape3 shape, Spacing spacing, std::string case_id, float fill = 0.f);
SegMask make_mask(Shape3 shape, Spacing spacing, std::string case_id);

// NIfTI-1 single-file (.nii) I/O. Volumes are written as float32, masks as
// uint8, label maps as int32. Readers accept uint8/int16/int32/float32/float64
// and byte-swapped files; anything non-3D or with non-positive spacing is
// rejected with a diagnostic.
Volume load_volume(const std::string& path);
void save_volume(const Volume& v, const std::string& path);
SegMask load_mask(const std::string& path);
void save_mask(const SegMask& m, const std::string& path);
void save_labels(const std::vector<std::int32_t>& labels, Shape3 shape, Spacing spacing,
                 const std::string& path);

// Per-volume z-score: output has mean 0, std 1 (population) over all voxels.
// Throws on constant input ("degenerate intensity").
Volume normalize_intensity(const Volume& v);

struct PatchSample {
  Volume patch;
  std::optional<SegMask> mask_patch;
  Index3 corner;            // volume coordinates of patch origin
  bool fg_fallback = false; // foreground_bias requested but mask was empty
};

// Draws a size^3-shaped patch fully inside the grid (no padding). With
// probability foreground_bias the patch is centered on a foreground voxel of
// the mask (center clamped so the patch still fits).
PatchSample sample_patch(const Volume& v, const SegMask* mask, Shape3 size,
                         double foreground_bias, std::uint64_t seed);

}  // namespace dgseg
