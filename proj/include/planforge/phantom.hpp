#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "planforge/types.hpp"

namespace planforge {

// 2-D voxel grid. Volumes assume a fixed 3 mm slice thickness so that
// absolute-volume metrics (cc) are meaningful.
struct GridSpec {
  int nx = 64;
  int ny = 64;
  double voxel_size_mm = 3.0;

  static constexpr double kSliceThicknessMm = 3.0;

  int voxel_count() const { return nx * ny; }
  double voxel_volume_cc() const {
    return voxel_size_mm * voxel_size_mm * kSliceThicknessMm / 1000.0;
  }
  int index(int ix, int iy) const { return iy * nx + ix; }

  // Voxel center in mm, origin at the grid center. +y points posterior.
  double center_x_mm(int ix) const { return (ix + 0.5 - 0.5 * nx) * voxel_size_mm; }
  double center_y_mm(int iy) const { return (iy + 0.5 - 0.5 * ny) * voxel_size_mm; }

  void validate() const;
};

struct Structure {
  std::string name;
  std::vector<std::uint8_t> mask;  // one flag per voxel, row-major (iy*nx+ix)

  int voxel_count() const;
  // Indices of voxels inside the mask, ascending.
  std::vector<int> voxel_indices() const;
};

// Ordered structure list; index 0 is always the CTV and the order is the
// canonical DVH row order.
struct StructureSet {
  std::vector<Structure> structures;

  Index size() const { return static_cast<Index>(structures.size()); }
  const Structure& ctv() const { return structures.front(); }
  const Structure& at(Index i) const { return structures[static_cast<size_t>(i)]; }
  int find(const std::string& name) const;  // -1 if absent

  void validate(const GridSpec& grid) const;
};

// Canonical 19-structure name list (CTV first, then the 18 OARs).
const std::vector<std::string>& canonical_structure_names();

struct BeamConfig {
  std::vector<double> gantry_angles_deg{45.0, 315.0};
  int beamlets_per_field = 32;
  double lateral_sigma_mm = 6.0;
  // Lateral beamlet center offsets (mm), shared by all fields.
  std::vector<double> beamlet_offsets_mm;
  // Normalized depth-dose curve tabulated at uniform depth_step_mm spacing,
  // starting at depth 0. Linear interpolation between samples, 0 beyond.
  std::vector<double> depth_profile;
  double depth_step_mm = 1.0;

  int field_count() const { return static_cast<int>(gantry_angles_deg.size()); }
  int beamlet_count() const { return field_count() * beamlets_per_field; }
  double profile_at(double depth_mm) const;

  void validate() const;
};

// Rows = voxels, columns = beamlets, entries in Gy per unit fluence.
using InfluenceMatrix = Matrix;

struct Case {
  std::string id;
  GridSpec grid;
  StructureSet structures;
  BeamConfig beams;
  InfluenceMatrix influence;
  double prescription_gy = 60.0;

  void validate() const;
};

// Deterministic synthetic case generation. `template_name` is one of
// "hnc" (CTV + 18 OARs) or "tiny" (CTV + spinal cord analogue).
Case generate_case(std::uint64_t seed, const GridSpec& grid,
                   const std::string& template_name,
                   double prescription_gy = 60.0);

// Geometric pencil-beam influence: column j is the dose of unit fluence on
// beamlet j, a tabulated depth profile along the ray times a lateral Gaussian.
InfluenceMatrix compute_influence(const GridSpec& grid, const BeamConfig& beams);

// d = influence * fluence. Dimension-checked.
Vector dose(const InfluenceMatrix& influence, const Vector& fluence);

}  // namespace planforge
