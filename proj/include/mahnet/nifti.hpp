#pragma once

// Minimal uncompressed single-file NIfTI-1 reader (int16/float32),
// little-endian, with scl_slope/scl_inter applied when nonzero.

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace mahnet {

struct VolumeRecord {
  int nx = 0, ny = 0, nz = 0;
  std::vector<float> voxels;  // x fastest, then y, then z
  std::string source_id;

  float at(int x, int y, int z) const {
    return voxels[(static_cast<size_t>(z) * ny + y) * nx + x];
  }
};

namespace detail {

#pragma pack(push, 1)
struct Nifti1Header {
  int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  int32_t extents;
  int16_t session_error;
  char regular;
  char dim_info;
  int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  int16_t intent_code;
  int16_t datatype;
  int16_t bitpix;
  int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

}  // namespace detail

constexpr int16_t kNiftiInt16 = 4;
constexpr int16_t kNiftiFloat32 = 16;

inline VolumeRecord read_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("nifti: cannot open " + path);
  detail::Nifti1Header h{};
  is.read(reinterpret_cast<char*>(&h), sizeof(h));
  if (!is) throw std::runtime_error("nifti: truncated header in " + path);
  if (std::memcmp(h.magic, "n+1", 4) != 0) {
    if (std::memcmp(h.magic, "ni1", 4) == 0)
      throw std::runtime_error("nifti: two-file (ni1) form is not supported: " + path);
    throw std::runtime_error("nifti: bad magic in " + path);
  }
  if (h.sizeof_hdr != 348) throw std::runtime_error("nifti: bad sizeof_hdr in " + path);
  if (h.dim[0] < 3 || h.dim[1] < 1 || h.dim[2] < 1 || h.dim[3] < 1)
    throw std::runtime_error("nifti: need a 3D volume in " + path);
  if (h.datatype != kNiftiInt16 && h.datatype != kNiftiFloat32)
    throw std::runtime_error("nifti: unsupported datatype " + std::to_string(h.datatype) +
                             " in " + path);

  VolumeRecord v;
  v.nx = h.dim[1];
  v.ny = h.dim[2];
  v.nz = h.dim[3];
  v.source_id = path;
  const size_t n = static_cast<size_t>(v.nx) * v.ny * v.nz;
  v.voxels.resize(n);

  is.seekg(static_cast<std::streamoff>(h.vox_offset), std::ios::beg);
  if (h.datatype == kNiftiInt16) {
    std::vector<int16_t> raw(n);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 2));
    if (!is) throw std::runtime_error("nifti: truncated voxel data in " + path);
    for (size_t i = 0; i < n; ++i) v.voxels[i] = static_cast<float>(raw[i]);
  } else {
    is.read(reinterpret_cast<char*>(v.voxels.data()), static_cast<std::streamsize>(n * 4));
    if (!is) throw std::runtime_error("nifti: truncated voxel data in " + path);
  }
  if (h.scl_slope != 0.0f) {
    for (auto& x : v.voxels) x = h.scl_slope * x + h.scl_inter;
  }
  return v;
}

// Test-fixture writer for the subset the reader accepts.
inline void write_volume_int16(const std::string& path, int nx, int ny, int nz,
                               const std::vector<int16_t>& data, float scl_slope = 0.0f,
                               float scl_inter = 0.0f) {
  if (data.size() != static_cast<size_t>(nx) * ny * nz)
    throw std::invalid_argument("write_volume_int16: size mismatch");
  detail::Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.dim[0] = 3;
  h.dim[1] = static_cast<int16_t>(nx);
  h.dim[2] = static_cast<int16_t>(ny);
  h.dim[3] = static_cast<int16_t>(nz);
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = kNiftiInt16;
  h.bitpix = 16;
  h.vox_offset = 352.0f;
  h.scl_slope = scl_slope;
  h.scl_inter = scl_inter;
  std::memcpy(h.magic, "n+1", 4);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("nifti: cannot write " + path);
  os.write(reinterpret_cast<const char*>(&h), sizeof(h));
  const char ext[4] = {0, 0, 0, 0};
  os.write(ext, 4);
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * 2));
}

}  // namespace mahnet
