#include "planforge/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "planforge/rng.hpp"

namespace planforge {

void GridSpec::validate() const {
  if (nx < 16 || ny < 16)
    throw ConfigError("grid too small: nx and ny must be >= 16");
  if (voxel_size_mm <= 0.0) throw ConfigError("voxel_size_mm must be > 0");
}

int Structure::voxel_count() const {
  return static_cast<int>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::vector<int> Structure::voxel_indices() const {
  std::vector<int> idx;
  idx.reserve(mask.size() / 8);
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) idx.push_back(static_cast<int>(i));
  return idx;
}

int StructureSet::find(const std::string& name) const {
  for (size_t i = 0; i < structures.size(); ++i)
    if (structures[i].name == name) return static_cast<int>(i);
  return -1;
}

void StructureSet::validate(const GridSpec& grid) const {
  if (structures.empty() || structures.front().name != "CTV")
    throw ConfigError("structure set must start with CTV");
  const size_t nvox = static_cast<size_t>(grid.voxel_count());
  for (const auto& s : structures) {
    if (s.mask.size() != nvox)
      throw ConfigError("mask size mismatch for structure " + s.name);
    if (s.voxel_count() == 0)
      throw ConfigError("empty structure mask: " + s.name);
  }
  // The CTV must not fully contain any OAR.
  const auto& ctv = structures.front().mask;
  for (size_t k = 1; k < structures.size(); ++k) {
    const auto& m = structures[k].mask;
    bool outside = false;
    for (size_t i = 0; i < m.size(); ++i)
      if (m[i] && !ctv[i]) { outside = true; break; }
    if (!outside)
      throw ConfigError("CTV fully contains OAR " + structures[k].name);
  }
}

const std::vector<std::string>& canonical_structure_names() {
  static const std::vector<std::string> names = {
      "CTV",          "BrainStem",      "SpinalCord",     "OpticChiasm",
      "Opt-R",        "Opt-L",          "TemporalLobe-R", "TemporalLobe-L",
      "Mandible",     "TMJ-R",          "TMJ-L",          "Parotid-R",
      "Parotid-L",    "Lens-R",         "Lens-L",         "Eye-R",
      "Eye-L",        "InnerEar-R",     "InnerEar-L"};
  return names;
}

double BeamConfig::profile_at(double depth_mm) const {
  if (depth_mm < 0.0 || depth_profile.empty()) return 0.0;
  const double pos = depth_mm / depth_step_mm;
  const auto n = static_cast<Index>(depth_profile.size());
  const auto k = static_cast<Index>(pos);
  if (k >= n - 1) return k >= n ? 0.0 : depth_profile[static_cast<size_t>(n - 1)];
  const double frac = pos - static_cast<double>(k);
  return depth_profile[static_cast<size_t>(k)] * (1.0 - frac) +
         depth_profile[static_cast<size_t>(k) + 1] * frac;
}

void BeamConfig::validate() const {
  if (gantry_angles_deg.empty()) throw ConfigError("no beam fields configured");
  if (beamlets_per_field < 4) throw ConfigError("beamlets_per_field must be >= 4");
  if (lateral_sigma_mm <= 0.0) throw ConfigError("lateral_sigma_mm must be > 0");
  if (depth_profile.empty()) throw ConfigError("depth_profile is empty");
  double top = 0.0;
  for (double v : depth_profile) {
    if (v < 0.0) throw ConfigError("depth_profile values must be >= 0");
    top = std::max(top, v);
  }
  if (std::abs(top - 1.0) > 1e-12)
    throw ConfigError("depth_profile must be normalized to max 1");
  if (beamlet_offsets_mm.size() != static_cast<size_t>(beamlets_per_field))
    throw ConfigError("beamlet_offsets_mm size must equal beamlets_per_field");
}

void Case::validate() const {
  grid.validate();
  structures.validate(grid);
  beams.validate();
  if (prescription_gy <= 0.0) throw ConfigError("prescription_gy must be > 0");
  if (influence.rows() != grid.voxel_count())
    throw ConfigError("influence row count must equal voxel count");
  if (influence.cols() != beams.beamlet_count())
    throw ConfigError("influence column count must equal beamlet count");
  if ((influence.array() < 0.0).any())
    throw ConfigError("influence entries must be >= 0");
  for (Index j = 0; j < influence.cols(); ++j)
    if (influence.col(j).maxCoeff() <= 0.0)
      throw ConfigError("all-zero influence column " + std::to_string(j) +
                        " (beam ray misses the grid)");
}

namespace {

struct FieldGeometry {
  double dir_x, dir_y;    // unit travel direction
  double perp_x, perp_y;  // unit lateral direction
  double entry_offset;    // min over grid corners of corner . dir
};

FieldGeometry field_geometry(const GridSpec& grid, double gantry_deg) {
  const double rad = gantry_deg * M_PI / 180.0;
  FieldGeometry f;
  f.dir_x = -std::sin(rad);
  f.dir_y = std::cos(rad);
  f.perp_x = f.dir_y;
  f.perp_y = -f.dir_x;
  const double hx = 0.5 * grid.nx * grid.voxel_size_mm;
  const double hy = 0.5 * grid.ny * grid.voxel_size_mm;
  double lo = std::numeric_limits<double>::infinity();
  for (double sx : {-1.0, 1.0})
    for (double sy : {-1.0, 1.0})
      lo = std::min(lo, sx * hx * f.dir_x + sy * hy * f.dir_y);
  f.entry_offset = lo;
  return f;
}

double depth_of(const FieldGeometry& f, double x, double y) {
  return x * f.dir_x + y * f.dir_y - f.entry_offset;
}

double lateral_of(const FieldGeometry& f, double x, double y) {
  return x * f.perp_x + y * f.perp_y;
}

struct EllipseSpec {
  std::string name;
  double cx, cy;  // fractional grid coordinates, y = 0 anterior
  double rx, ry;  // fractional radii
};

// Nominal head-and-neck-like layout: central CTV, paired lateral OARs, and
// posterior cord/brainstem analogues. Fractions of the grid extent.
std::vector<EllipseSpec> hnc_layout() {
  return {
      {"CTV", 0.50, 0.52, 0.110, 0.095},
      {"BrainStem", 0.50, 0.69, 0.045, 0.050},
      {"SpinalCord", 0.50, 0.81, 0.032, 0.038},
      {"OpticChiasm", 0.50, 0.33, 0.035, 0.025},
      {"Opt-R", 0.42, 0.29, 0.025, 0.020},
      {"Opt-L", 0.58, 0.29, 0.025, 0.020},
      {"TemporalLobe-R", 0.295, 0.60, 0.065, 0.080},
      {"TemporalLobe-L", 0.705, 0.60, 0.065, 0.080},
      {"Mandible", 0.50, 0.21, 0.160, 0.040},
      {"TMJ-R", 0.28, 0.41, 0.025, 0.025},
      {"TMJ-L", 0.72, 0.41, 0.025, 0.025},
      {"Parotid-R", 0.235, 0.52, 0.050, 0.065},
      {"Parotid-L", 0.765, 0.52, 0.050, 0.065},
      {"Lens-R", 0.40, 0.115, 0.016, 0.016},
      {"Lens-L", 0.60, 0.115, 0.016, 0.016},
      {"Eye-R", 0.40, 0.16, 0.038, 0.038},
      {"Eye-L", 0.60, 0.16, 0.038, 0.038},
      {"InnerEar-R", 0.215, 0.645, 0.024, 0.024},
      {"InnerEar-L", 0.785, 0.645, 0.024, 0.024},
  };
}

std::vector<EllipseSpec> tiny_layout() {
  return {
      {"CTV", 0.50, 0.48, 0.140, 0.130},
      {"SpinalCord", 0.50, 0.72, 0.070, 0.065},
  };
}

Structure rasterize(const GridSpec& grid, const EllipseSpec& e) {
  Structure s;
  s.name = e.name;
  s.mask.assign(static_cast<size_t>(grid.voxel_count()), 0);
  const double cx = e.cx * grid.nx;
  const double cy = e.cy * grid.ny;
  const double rx = std::max(e.rx * grid.nx, 1e-9);
  const double ry = std::max(e.ry * grid.ny, 1e-9);
  for (int iy = 0; iy < grid.ny; ++iy) {
    for (int ix = 0; ix < grid.nx; ++ix) {
      const double dx = (ix + 0.5 - cx) / rx;
      const double dy = (iy + 0.5 - cy) / ry;
      if (dx * dx + dy * dy <= 1.0)
        s.mask[static_cast<size_t>(grid.index(ix, iy))] = 1;
    }
  }
  if (s.voxel_count() == 0) {
    // Sub-voxel structure on a coarse grid: keep the voxel nearest the center.
    const int ix = std::clamp(static_cast<int>(cx), 0, grid.nx - 1);
    const int iy = std::clamp(static_cast<int>(cy), 0, grid.ny - 1);
    s.mask[static_cast<size_t>(grid.index(ix, iy))] = 1;
  }
  return s;
}

std::vector<double> make_sobp_profile(double r1_mm, double r2_mm,
                                      double max_depth_mm, double step_mm) {
  constexpr double kPlateau = 0.35;
  constexpr double kRampMm = 6.0;
  constexpr double kFalloffMm = 6.0;
  const int n = static_cast<int>(std::ceil(max_depth_mm / step_mm)) + 2;
  std::vector<double> p(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double d = k * step_mm;
    double v;
    if (d <= r1_mm - kRampMm) {
      v = kPlateau;
    } else if (d < r1_mm) {
      v = kPlateau + (1.0 - kPlateau) * (d - (r1_mm - kRampMm)) / kRampMm;
    } else if (d <= r2_mm) {
      v = 1.0;
    } else if (d < r2_mm + kFalloffMm) {
      v = 1.0 - (d - r2_mm) / kFalloffMm;
    } else {
      v = 0.0;
    }
    p[static_cast<size_t>(k)] = v;
  }
  return p;
}

}  // namespace

InfluenceMatrix compute_influence(const GridSpec& grid, const BeamConfig& beams) {
  const int nvox = grid.voxel_count();
  const int nfields = beams.field_count();
  const int nb = beams.beamlets_per_field;
  InfluenceMatrix m = Matrix::Zero(nvox, static_cast<Index>(nfields) * nb);
  const double inv2s2 = 1.0 / (2.0 * beams.lateral_sigma_mm * beams.lateral_sigma_mm);
  for (int f = 0; f < nfields; ++f) {
    const FieldGeometry geom = field_geometry(grid, beams.gantry_angles_deg[static_cast<size_t>(f)]);
    for (int iy = 0; iy < grid.ny; ++iy) {
      for (int ix = 0; ix < grid.nx; ++ix) {
        const double x = grid.center_x_mm(ix);
        const double y = grid.center_y_mm(iy);
        const double dd = beams.profile_at(depth_of(geom, x, y));
        if (dd <= 0.0) continue;
        const double lat = lateral_of(geom, x, y);
        const int row = grid.index(ix, iy);
        for (int j = 0; j < nb; ++j) {
          const double dl = lat - beams.beamlet_offsets_mm[static_cast<size_t>(j)];
          m(row, static_cast<Index>(f) * nb + j) = dd * std::exp(-dl * dl * inv2s2);
        }
      }
    }
  }
  return m;
}

Vector dose(const InfluenceMatrix& influence, const Vector& fluence) {
  if (fluence.size() != influence.cols())
    throw ConfigError("fluence length must equal beamlet count");
  return influence * fluence;
}

Case generate_case(std::uint64_t seed, const GridSpec& grid,
                   const std::string& template_name, double prescription_gy) {
  grid.validate();
  if (prescription_gy <= 0.0) throw ConfigError("prescription_gy must be > 0");

  std::vector<EllipseSpec> layout;
  if (template_name == "hnc") {
    layout = hnc_layout();
  } else if (template_name == "tiny") {
    layout = tiny_layout();
  } else {
    throw ConfigError("unknown phantom template: " + template_name);
  }

  // Jitter placement and size per structure so cases differ across seeds.
  Rng rng(derive_seed(seed, 0x9e0));
  for (auto& e : layout) {
    const double cj = (e.name == "CTV") ? 0.02 : 0.015;
    e.cx += rng.uniform(-cj, cj);
    e.cy += rng.uniform(-cj, cj);
    const double rs = rng.uniform(0.88, 1.15);
    e.rx *= rs;
    e.ry *= rng.uniform(0.88, 1.15);
  }

  Case c;
  c.id = template_name + "-" + std::to_string(seed);
  c.grid = grid;
  c.prescription_gy = prescription_gy;
  for (const auto& e : layout) c.structures.structures.push_back(rasterize(grid, e));
  c.structures.validate(grid);

  // Beam model: SOBP window spanning the CTV depth extent across all fields,
  // beamlet offsets spanning the CTV lateral extent plus penumbra margin.
  BeamConfig beams;
  beams.gantry_angles_deg = {45.0, 315.0};
  beams.beamlets_per_field = 32;
  beams.lateral_sigma_mm = 2.0 * grid.voxel_size_mm;

  const auto ctv_idx = c.structures.ctv().voxel_indices();
  double dmin = std::numeric_limits<double>::infinity(), dmax = -dmin;
  double lmin = dmin, lmax = -dmin;
  for (double ang : beams.gantry_angles_deg) {
    const FieldGeometry geom = field_geometry(grid, ang);
    for (int idx : ctv_idx) {
      const double x = grid.center_x_mm(idx % grid.nx);
      const double y = grid.center_y_mm(idx / grid.nx);
      const double d = depth_of(geom, x, y);
      const double l = lateral_of(geom, x, y);
      dmin = std::min(dmin, d);
      dmax = std::max(dmax, d);
      lmin = std::min(lmin, l);
      lmax = std::max(lmax, l);
    }
  }
  const double grid_diag_mm =
      std::hypot(grid.nx * grid.voxel_size_mm, grid.ny * grid.voxel_size_mm);
  beams.depth_step_mm = 1.0;
  beams.depth_profile = make_sobp_profile(dmin - 3.0, dmax + 3.0, grid_diag_mm,
                                          beams.depth_step_mm);
  const double margin = beams.lateral_sigma_mm + 3.0;
  const double lo = lmin - margin, hi = lmax + margin;
  beams.beamlet_offsets_mm.resize(static_cast<size_t>(beams.beamlets_per_field));
  for (int j = 0; j < beams.beamlets_per_field; ++j)
    beams.beamlet_offsets_mm[static_cast<size_t>(j)] =
        lo + (j + 0.5) * (hi - lo) / beams.beamlets_per_field;
  c.beams = beams;

  c.influence = compute_influence(grid, c.beams);

  // Normalize so that uniform unit fluence delivers the prescription to the
  // CTV on average; keeps fluence values O(1) and guarantees coverage
  // feasibility by construction.
  const Vector d_unit = c.influence * Vector::Ones(c.influence.cols());
  double ctv_mean = 0.0;
  for (int idx : ctv_idx) ctv_mean += d_unit[idx];
  ctv_mean /= static_cast<double>(ctv_idx.size());
  if (ctv_mean <= 0.0) throw NumericError("beams deliver no dose to the CTV");
  c.influence *= prescription_gy / ctv_mean;

  c.validate();
  return c;
}

}  // namespace planforge
