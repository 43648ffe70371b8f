#include "swe/phantom.hpp"

namespace swe {

void PhantomRanges::validate() const {
  auto in = [](double lo, double hi, double a, double b) {
    return a >= lo && b <= hi && a <= b;
  };
  if (!in(3.0, 12.0, diameter_min_mm, diameter_max_mm))
    throw ConfigError("diameter range must lie within [3, 12] mm");
  if (!in(8.0, 100.0, inclusion_min_kpa, inclusion_max_kpa))
    throw ConfigError("inclusion stiffness range must lie within [8, 100] kPa");
  if (!in(10.0, 35.0, background_min_kpa, background_max_kpa))
    throw ConfigError("background stiffness range must lie within [10, 35] kPa");
}

void PhantomSpec::validate() const {
  const double r = diameter_mm / 2.0;
  if (center_x_mm - r < roi_x0_mm - 1e-9 ||
      center_x_mm + r > roi_x0_mm + roi_w_mm + 1e-9 ||
      center_z_mm - r < roi_z0_mm - 1e-9 ||
      center_z_mm + r > roi_z0_mm + roi_d_mm + 1e-9)
    throw GeometryError("inclusion circle extends outside the ROI");
  if (diameter_mm < 0) throw ConfigError("negative inclusion diameter");
}

PhantomSpec sample_phantom(std::uint64_t seed, const PhantomRanges& ranges,
                           const RoiGeometry& geo) {
  ranges.validate();
  geo.validate();
  Rng rng(mix_seed(seed, 0x9a11));
  PhantomSpec s;
  s.seed = seed;
  s.fov_w_mm = geo.fov_w_mm;
  s.fov_d_mm = geo.fov_d_mm;
  s.roi_w_mm = geo.roi_w_mm;
  s.roi_d_mm = geo.roi_d_mm;
  s.roi_x0_mm = geo.roi_x0_mm;
  s.roi_z0_mm = geo.roi_z0_mm;
  s.diameter_mm = rng.uniform(ranges.diameter_min_mm, ranges.diameter_max_mm);
  s.inclusion_kpa =
      rng.uniform(ranges.inclusion_min_kpa, ranges.inclusion_max_kpa);
  s.background_kpa =
      rng.uniform(ranges.background_min_kpa, ranges.background_max_kpa);
  const double r = s.diameter_mm / 2.0;
  s.center_x_mm = rng.uniform(geo.roi_x0_mm + r, geo.roi_x0_mm + geo.roi_w_mm - r);
  s.center_z_mm = rng.uniform(geo.roi_z0_mm + r, geo.roi_z0_mm + geo.roi_d_mm - r);
  s.validate();
  return s;
}

namespace {

inline bool inside_circle(double x, double z, const PhantomSpec& s) {
  const double r = s.diameter_mm / 2.0;
  const double dx = x - s.center_x_mm;
  const double dz = z - s.center_z_mm;
  return dx * dx + dz * dz < r * r;
}

}  // namespace

MaterialField rasterize(const PhantomSpec& spec, const GridSpec& grid) {
  spec.validate();
  if (grid.nx * grid.dx_mm + 1e-9 < spec.fov_w_mm ||
      grid.nz * grid.dz_mm + 1e-9 < spec.fov_d_mm)
    throw GeometryError("grid does not cover the FOV");
  const double r = spec.diameter_mm / 2.0;
  if (spec.center_x_mm - r < 0 || spec.center_x_mm + r > grid.nx * grid.dx_mm ||
      spec.center_z_mm - r < 0 || spec.center_z_mm + r > grid.nz * grid.dz_mm)
    throw GeometryError("inclusion outside the grid");

  MaterialField f;
  f.nx = grid.nx;
  f.nz = grid.nz;
  f.dx_mm = grid.dx_mm;
  f.dz_mm = grid.dz_mm;
  const std::size_t n = std::size_t(grid.nx) * grid.nz;
  f.e_kpa.resize(n);
  f.mu_kpa.resize(n);
  f.mask.resize(n);
  for (int iz = 0; iz < grid.nz; ++iz) {
    const double z = (iz + 0.5) * grid.dz_mm;
    for (int ix = 0; ix < grid.nx; ++ix) {
      const double x = (ix + 0.5) * grid.dx_mm;
      const bool in = inside_circle(x, z, spec);
      const double e = in ? spec.inclusion_kpa : spec.background_kpa;
      const std::size_t i = std::size_t(iz) * grid.nx + ix;
      f.e_kpa[i] = e;
      f.mu_kpa[i] = e / 3.0;
      f.mask[i] = in ? 1 : 0;
    }
  }
  return f;
}

GtMaps rasterize_roi(const PhantomSpec& spec, const RoiGeometry& geo) {
  spec.validate();
  GtMaps m;
  m.a = geo.axial_px();
  m.l = geo.roi_lateral_px();
  m.modulus_kpa.resize(std::size_t(m.a) * m.l);
  m.mask.resize(std::size_t(m.a) * m.l);
  for (int ia = 0; ia < m.a; ++ia) {
    const double z = geo.roi_z0_mm + (ia + 0.5) * geo.axial_pitch_mm;
    for (int il = 0; il < m.l; ++il) {
      const double x = geo.roi_x0_mm + (il + 0.5) * geo.lateral_pitch_mm;
      const bool in = inside_circle(x, z, spec);
      const std::size_t i = std::size_t(ia) * m.l + il;
      m.modulus_kpa[i] =
          float(in ? spec.inclusion_kpa : spec.background_kpa);
      m.mask[i] = in ? 1.0f : 0.0f;
    }
  }
  return m;
}

}  // namespace swe
