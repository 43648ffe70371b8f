#pragma once

#include <limits>

#include "swe/phantom.hpp"

namespace swe {

// Gaussian ARF push. The amplitude is a linear scale of the solution; the
// acquisition normalizes displacement peaks afterwards.
struct PushConfig {
  double x0_mm = 0.0, z0_mm = 20.0;
  double sigma_x_mm = 0.44, sigma_z_mm = 8.0;
  double amplitude_n_m3 = 2e5;
  double duration_s = 400e-6;

  void validate() const {
    if (sigma_x_mm <= 0 || sigma_z_mm <= 0)
      throw ConfigError("push beam widths must be positive");
    if (duration_s <= 0) throw ConfigError("push duration must be positive");
  }
};

struct AcquisitionConfig {
  RoiGeometry geo;
  int n_pushes = 4;
  std::vector<double> push_lateral_offsets_mm;  // empty = derived from geo
  double push_gap_mm = 4.0;
  double prf_hz = 8000.0;
  int n_frames = 72;
  int subregion_axial_px = 168;
  int raw_lateral_lines = 10;
  int lateral_interp_to = 16;
  double propagation_time_s = 9e-3;
  double peak_norm_um = 18.0;  // <= 0 disables the post-hoc rescale
  PushConfig push;

  void validate() const {
    if (n_pushes < 1) throw ConfigError("n_pushes must be >= 1");
    if (n_frames < 1 || prf_hz <= 0) throw ConfigError("bad frame timing");
    if ((n_frames - 1) / prf_hz > propagation_time_s + 1e-12)
      throw ConfigError("frame span exceeds simulated propagation time");
    if (raw_lateral_lines < 2 || lateral_interp_to < raw_lateral_lines)
      throw ConfigError("bad lateral sampling");
  }

  static AcquisitionConfig paper() { return AcquisitionConfig{}; }
  static AcquisitionConfig desk() {
    AcquisitionConfig a;
    a.geo = RoiGeometry::desk();
    a.n_frames = 64;
    a.propagation_time_s = 8e-3;
    a.subregion_axial_px = 84;
    a.raw_lateral_lines = 5;
    a.lateral_interp_to = 8;
    return a;
  }
};

// T x A x L axial particle displacement movie in micrometers.
struct MotionVolume {
  int t = 0, a = 0, l = 0;
  std::vector<float> u_um;
  double frame_dt_s = 1.25e-4;
  double pitch_ax_mm = 0.0, pitch_lat_mm = 0.0;

  std::size_t size() const { return std::size_t(t) * a * l; }
  float& at(int it, int ia, int il) {
    return u_um[(std::size_t(it) * a + ia) * l + il];
  }
  float at(int it, int ia, int il) const {
    return u_um[(std::size_t(it) * a + ia) * l + il];
  }
};

struct ForceField {
  int nx = 0, nz = 0;
  std::vector<double> f_n_m3;  // row-major (iz, ix)
};

constexpr double kSnrInf = std::numeric_limits<double>::infinity();

ForceField arf_force(const GridSpec& grid, const PushConfig& push, double t_s);

// Scalar SH-wave solver over the full FOV; returns displacement frames at the
// PRF, at grid resolution, in micrometers.
MotionVolume simulate_push(const MaterialField& field, const PushConfig& push,
                           const GridSpec& grid, int n_frames,
                           double frame_dt_s);

std::vector<MotionVolume> acquire_sequence(const MaterialField& field,
                                           const AcquisitionConfig& acq,
                                           const GridSpec& grid);

MotionVolume add_noise(const MotionVolume& vol, double snr_db,
                       std::uint64_t seed);

double measure_snr_db(const MotionVolume& clean, const MotionVolume& noisy);

// Time-of-flight speed between two lateral sample columns via peak
// cross-correlation of their time profiles (parabolic sub-sample refinement).
double tof_speed(const MotionVolume& vol, int l1, int l2);

}  // namespace swe
