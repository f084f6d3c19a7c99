#include "dgseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dgseg/rng.hpp"

namespace dgseg {

std::string to_string(Phase p) {
  return p == Phase::venous ? "venous" : "out_of_phase";
}

std::string to_string(DomainRole r) {
  switch (r) {
    case DomainRole::source: return "source";
    case DomainRole::target1: return "target1";
    default: return "target2";
  }
}

Phase phase_from_string(const std::string& s) {
  if (s == "venous") return Phase::venous;
  if (s == "out_of_phase") return Phase::out_of_phase;
  throw std::invalid_argument("unknown phase: " + s);
}

DomainRole role_from_string(const std::string& s) {
  if (s == "source") return DomainRole::source;
  if (s == "target1") return DomainRole::target1;
  if (s == "target2") return DomainRole::target2;
  throw std::invalid_argument("unknown domain role: " + s);
}

std::int64_t SegMask::foreground_count() const {
  std::int64_t n = 0;
  for (auto v : data) n += (v != 0);
  return n;
}

Volume make_volume(Shape3 shape, Spacing spacing, std::string case_id, float fill) {
  Volume v;
  v.shape = shape;
  v.spacing = spacing;
  v.case_id = std::move(case_id);
  v.data.assign(std::size_t(shape.voxels()), fill);
  return v;
}

SegMask make_mask(Shape3 shape, Spacing spacing, std::string case_id) {
  SegMask m;
  m.shape = shape;
  m.spacing = spacing;
  m.case_id = std::move(case_id);
  m.data.assign(std::size_t(shape.voxels()), 0);
  return m;
}

// ---------------------------------------------------------------------------
// NIfTI-1
// ---------------------------------------------------------------------------

namespace {

constexpr short kDtUint8 = 2;
constexpr short kDtInt16 = 4;
constexpr short kDtInt32 = 8;
constexpr short kDtFloat32 = 16;
constexpr short kDtFloat64 = 64;

#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

template <typename T>
void bswap(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  std::reverse(p, p + sizeof(T));
}

void swap_header(Nifti1Header& h) {
  bswap(h.sizeof_hdr);
  for (auto& d : h.dim) bswap(d);
  bswap(h.intent_code);
  bswap(h.datatype);
  bswap(h.bitpix);
  for (auto& p : h.pixdim) bswap(p);
  bswap(h.vox_offset);
  bswap(h.scl_slope);
  bswap(h.scl_inter);
  bswap(h.qform_code);
  bswap(h.sform_code);
}

struct RawImage {
  Shape3 shape;
  Spacing spacing;
  std::vector<double> values;
};

template <typename T>
std::vector<double> read_elements(std::ifstream& f, std::int64_t n, bool swapped) {
  std::vector<T> raw(static_cast<std::size_t>(n));
  f.read(reinterpret_cast<char*>(raw.data()), std::streamsize(n * sizeof(T)));
  if (!f) throw std::runtime_error("NIfTI read: truncated data section");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    T v = raw[std::size_t(i)];
    if (swapped) bswap(v);
    out[std::size_t(i)] = double(v);
  }
  return out;
}

RawImage read_nifti(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open file: " + path);

  Nifti1Header h{};
  f.read(reinterpret_cast<char*>(&h), sizeof(h));
  if (!f) throw std::runtime_error("NIfTI read: file too short for header: " + path);

  bool swapped = false;
  if (h.sizeof_hdr != 348) {
    swap_header(h);
    swapped = true;
    if (h.sizeof_hdr != 348)
      throw std::runtime_error("not a NIfTI-1 file (bad sizeof_hdr): " + path);
  }
  if (std::strncmp(h.magic, "n+1", 3) != 0 && std::strncmp(h.magic, "ni1", 3) != 0)
    throw std::runtime_error("not a NIfTI-1 file (bad magic): " + path);

  // squeeze trailing singleton dims so a dim[0]=4, nt=1 file still counts as 3D
  int ndim = h.dim[0];
  while (ndim > 3 && h.dim[ndim] == 1) --ndim;
  if (ndim != 3)
    throw std::runtime_error("expected 3D image, got " + std::to_string(h.dim[0]) +
                             "D: " + path);
  if (h.dim[1] <= 0 || h.dim[2] <= 0 || h.dim[3] <= 0)
    throw std::runtime_error("NIfTI read: non-positive dimension: " + path);

  RawImage img;
  img.shape = {h.dim[1], h.dim[2], h.dim[3]};
  for (int a = 0; a < 3; ++a) {
    const double s = double(h.pixdim[a + 1]);
    if (!(s > 0.0) || !std::isfinite(s))
      throw std::runtime_error("NIfTI read: non-positive voxel spacing: " + path);
    img.spacing[std::size_t(a)] = s;
  }

  const std::int64_t n = img.shape.voxels();
  std::int64_t offset = std::int64_t(h.vox_offset);
  if (offset < 348) offset = 352;
  f.seekg(offset, std::ios::beg);

  switch (h.datatype) {
    case kDtUint8: img.values = read_elements<std::uint8_t>(f, n, false); break;
    case kDtInt16: img.values = read_elements<std::int16_t>(f, n, swapped); break;
    case kDtInt32: img.values = read_elements<std::int32_t>(f, n, swapped); break;
    case kDtFloat32: img.values = read_elements<float>(f, n, swapped); break;
    case kDtFloat64: img.values = read_elements<double>(f, n, swapped); break;
    default:
      throw std::runtime_error("NIfTI read: unsupported datatype " +
                               std::to_string(h.datatype) + ": " + path);
  }

  if (h.scl_slope != 0.f && !(h.scl_slope == 1.f && h.scl_inter == 0.f)) {
    for (auto& v : img.values) v = v * double(h.scl_slope) + double(h.scl_inter);
  }
  return img;
}

Nifti1Header make_header(Shape3 shape, const Spacing& spacing, short datatype, short bitpix) {
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = short(shape.nx);
  h.dim[2] = short(shape.ny);
  h.dim[3] = short(shape.nz);
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = datatype;
  h.bitpix = bitpix;
  h.pixdim[0] = 1.f;
  h.pixdim[1] = float(spacing[0]);
  h.pixdim[2] = float(spacing[1]);
  h.pixdim[3] = float(spacing[2]);
  h.vox_offset = 352.f;
  h.scl_slope = 1.f;
  h.scl_inter = 0.f;
  h.xyzt_units = 2;  // millimetres
  h.sform_code = 1;
  h.srow_x[0] = float(spacing[0]);
  h.srow_y[1] = float(spacing[1]);
  h.srow_z[2] = float(spacing[2]);
  std::memcpy(h.magic, "n+1", 4);
  return h;
}

void write_nifti(const std::string& path, const Nifti1Header& h, const void* data,
                 std::size_t nbytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open file for writing: " + path);
  f.write(reinterpret_cast<const char*>(&h), sizeof(h));
  const char pad[4] = {0, 0, 0, 0};  // empty extension block
  f.write(pad, 4);
  f.write(reinterpret_cast<const char*>(data), std::streamsize(nbytes));
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::string stem_of(const std::string& path) {
  auto slash = path.find_last_of("/\\");
  std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
  auto dot = name.find('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

}  // namespace

Volume load_volume(const std::string& path) {
  RawImage img = read_nifti(path);
  Volume v;
  v.shape = img.shape;
  v.spacing = img.spacing;
  v.case_id = stem_of(path);
  v.data.resize(img.values.size());
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    const double x = img.values[i];
    if (!std::isfinite(x))
      throw std::runtime_error("NIfTI read: non-finite intensity at voxel " +
                               std::to_string(i) + ": " + path);
    v.data[i] = float(x);
  }
  return v;
}

void save_volume(const Volume& v, const std::string& path) {
  const Nifti1Header h = make_header(v.shape, v.spacing, kDtFloat32, 32);
  write_nifti(path, h, v.data.data(), v.data.size() * sizeof(float));
}

SegMask load_mask(const std::string& path) {
  RawImage img = read_nifti(path);
  SegMask m;
  m.shape = img.shape;
  m.spacing = img.spacing;
  m.case_id = stem_of(path);
  m.data.resize(img.values.size());
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    const double x = img.values[i];
    if (x != 0.0 && x != 1.0)
      throw std::runtime_error("mask is not binary (value " + std::to_string(x) +
                               "): " + path);
    m.data[i] = std::uint8_t(x);
  }
  return m;
}

void save_mask(const SegMask& m, const std::string& path) {
  const Nifti1Header h = make_header(m.shape, m.spacing, kDtUint8, 8);
  write_nifti(path, h, m.data.data(), m.data.size());
}

void save_labels(const std::vector<std::int32_t>& labels, Shape3 shape, Spacing spacing,
                 const std::string& path) {
  if (std::int64_t(labels.size()) != shape.voxels())
    throw std::invalid_argument("save_labels: size/shape mismatch");
  const Nifti1Header h = make_header(shape, spacing, kDtInt32, 32);
  write_nifti(path, h, labels.data(), labels.size() * sizeof(std::int32_t));
}

// ---------------------------------------------------------------------------

Volume normalize_intensity(const Volume& v) {
  const std::int64_t n = v.shape.voxels();
  if (n == 0) throw std::invalid_argument("normalize_intensity: empty volume");

  double sum = 0.0;
  for (float x : v.data) sum += double(x);
  const double mean = sum / double(n);
  double ss = 0.0;
  bool distinct = false;
  for (float x : v.data) {
    const double d = double(x) - mean;
    ss += d * d;
    distinct = distinct || (x != v.data[0]);
  }
  if (!distinct) throw std::runtime_error("degenerate intensity: constant volume");
  const double std_dev = std::sqrt(ss / double(n));

  Volume out = v;
  for (auto& x : out.data) x = float((double(x) - mean) / std_dev);
  return out;
}

PatchSample sample_patch(const Volume& v, const SegMask* mask, Shape3 size,
                         double foreground_bias, std::uint64_t seed) {
  if (size.nx > v.shape.nx || size.ny > v.shape.ny || size.nz > v.shape.nz)
    throw std::invalid_argument("sample_patch: patch larger than volume");
  if (mask && mask->shape != v.shape)
    throw std::invalid_argument("sample_patch: mask shape mismatch");

  Rng rng(derive_seed(seed, hash_string("sample_patch")));
  const int rx = v.shape.nx - size.nx;
  const int ry = v.shape.ny - size.ny;
  const int rz = v.shape.nz - size.nz;

  PatchSample out;
  bool want_fg = false;
  if (foreground_bias > 0.0) {
    const double u = rng.uniform();
    want_fg = u < foreground_bias;
  }

  Index3 corner;
  if (want_fg && mask) {
    std::vector<std::int64_t> fg;
    fg.reserve(1024);
    for (std::int64_t i = 0; i < v.shape.voxels(); ++i)
      if (mask->data[std::size_t(i)]) fg.push_back(i);
    if (fg.empty()) {
      out.fg_fallback = true;
      want_fg = false;
    } else {
      const Index3 c = unflatten(v.shape, fg[rng.uniform_index(fg.size())]);
      corner.x = std::clamp(c.x - size.nx / 2, 0, rx);
      corner.y = std::clamp(c.y - size.ny / 2, 0, ry);
      corner.z = std::clamp(c.z - size.nz / 2, 0, rz);
    }
  }
  if (!want_fg) {
    corner.x = rx > 0 ? int(rng.uniform_index(std::uint64_t(rx) + 1)) : 0;
    corner.y = ry > 0 ? int(rng.uniform_index(std::uint64_t(ry) + 1)) : 0;
    corner.z = rz > 0 ? int(rng.uniform_index(std::uint64_t(rz) + 1)) : 0;
  }

  out.corner = corner;
  out.patch = make_volume(size, v.spacing, v.case_id + "_patch");
  for (int z = 0; z < size.nz; ++z)
    for (int y = 0; y < size.ny; ++y)
      for (int x = 0; x < size.nx; ++x)
        out.patch.at(x, y, z) = v.at(corner.x + x, corner.y + y, corner.z + z);

  if (mask) {
    SegMask mp = make_mask(size, v.spacing, v.case_id + "_patch");
    for (int z = 0; z < size.nz; ++z)
      for (int y = 0; y < size.ny; ++y)
        for (int x = 0; x < size.nx; ++x)
          mp.at(x, y, z) = mask->at(corner.x + x, corner.y + y, corner.z + z);
    out.mask_patch = std::move(mp);
  }
  return out;
}

}  // namespace dgseg
