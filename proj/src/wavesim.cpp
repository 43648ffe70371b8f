#include "swe/wavesim.hpp"

#include <algorithm>
#include <cmath>

namespace swe {

namespace {

constexpr int kSpongeCells = 20;
constexpr double kSpongeStrength = 0.1;
constexpr double kCflSafety = 0.9;

double stable_dt(const MaterialField& field) {
  double mu_max = 0.0;
  for (double mu : field.mu_kpa) mu_max = std::max(mu_max, mu);
  const double v_max = std::sqrt(mu_max * 1000.0 / field.rho_kg_m3);
  const double h = std::min(field.dx_mm, field.dz_mm) * 1e-3;
  return kCflSafety * h / (std::sqrt(2.0) * v_max);
}

}  // namespace

ForceField arf_force(const GridSpec& grid, const PushConfig& push, double t_s) {
  push.validate();
  if (t_s < 0) throw ConfigError("arf_force: negative time");
  ForceField f;
  f.nx = grid.nx;
  f.nz = grid.nz;
  f.f_n_m3.assign(std::size_t(grid.nx) * grid.nz, 0.0);
  if (t_s >= push.duration_s) return f;
  const double isx2 = 1.0 / (2.0 * push.sigma_x_mm * push.sigma_x_mm);
  const double isz2 = 1.0 / (2.0 * push.sigma_z_mm * push.sigma_z_mm);
  for (int iz = 0; iz < grid.nz; ++iz) {
    const double z = (iz + 0.5) * grid.dz_mm;
    const double ez = (z - push.z0_mm) * (z - push.z0_mm) * isz2;
    for (int ix = 0; ix < grid.nx; ++ix) {
      const double x = (ix + 0.5) * grid.dx_mm;
      const double ex = (x - push.x0_mm) * (x - push.x0_mm) * isx2;
      f.f_n_m3[std::size_t(iz) * grid.nx + ix] =
          push.amplitude_n_m3 * std::exp(-(ex + ez));
    }
  }
  return f;
}

MotionVolume simulate_push(const MaterialField& field, const PushConfig& push,
                           const GridSpec& grid, int n_frames,
                           double frame_dt_s) {
  push.validate();
  const int nx = field.nx, nz = field.nz;
  if (nx != grid.nx || nz != grid.nz)
    throw ConfigError("field/grid size mismatch");
  for (double mu : field.mu_kpa)
    if (!std::isfinite(mu)) throw NumericalError("NaN in material field");

  const double dt_cfl = stable_dt(field);
  double dt = grid.dt_s > 0 ? grid.dt_s : dt_cfl;
  if (dt > dt_cfl + 1e-15)
    throw ConfigError("time step violates the CFL stability bound");
  // Snap dt so frames land exactly on solver steps.
  const int steps_per_frame = int(std::ceil(frame_dt_s / dt - 1e-12));
  dt = frame_dt_s / steps_per_frame;
  const int n_steps = steps_per_frame * (n_frames - 1);

  const double dx = field.dx_mm * 1e-3, dz = field.dz_mm * 1e-3;
  const double rho = field.rho_kg_m3;
  const std::size_t n = std::size_t(nx) * nz;

  // Precompute SI shear moduli at cell faces and the sponge profile.
  std::vector<double> mu(n);
  for (std::size_t i = 0; i < n; ++i) mu[i] = field.mu_kpa[i] * 1000.0;
  // Cell-centered damping for velocity; geometric-mean face weights for the
  // stresses keep the staggered scheme mirror-symmetric.
  auto sponge_at = [&](int ix, int iz) {
    const int b =
        std::min(std::min(ix, nx - 1 - ix), std::min(iz, nz - 1 - iz));
    if (b >= kSpongeCells) return 1.0;
    const double d = double(kSpongeCells - b) / kSpongeCells;
    return std::exp(-kSpongeStrength * d * d);
  };
  std::vector<double> sponge(n), sponge_fx(n, 1.0), sponge_fz(n, 1.0);
  for (int iz = 0; iz < nz; ++iz)
    for (int ix = 0; ix < nx; ++ix) {
      sponge[std::size_t(iz) * nx + ix] = sponge_at(ix, iz);
      if (ix < nx - 1)
        sponge_fx[std::size_t(iz) * nx + ix] =
            std::sqrt(sponge_at(ix, iz) * sponge_at(ix + 1, iz));
      if (iz < nz - 1)
        sponge_fz[std::size_t(iz) * nx + ix] =
            std::sqrt(sponge_at(ix, iz) * sponge_at(ix, iz + 1));
    }

  ForceField arf = arf_force(grid, push, 0.0);

  std::vector<double> v(n, 0.0), u(n, 0.0), sx(n, 0.0), sz(n, 0.0);

  MotionVolume out;
  out.t = n_frames;
  out.a = nz;
  out.l = nx;
  out.u_um.assign(std::size_t(n_frames) * n, 0.0f);
  out.frame_dt_s = frame_dt_s;
  out.pitch_ax_mm = field.dz_mm;
  out.pitch_lat_mm = field.dx_mm;

  const double inv_rho_dt = dt / rho;
  for (int step = 1; step <= n_steps; ++step) {
    const double t_mid = (step - 0.5) * dt;
    const bool forced = t_mid < push.duration_s;
    // Stress update from the current velocity field.
    for (int iz = 0; iz < nz; ++iz) {
      const std::size_t row = std::size_t(iz) * nx;
      for (int ix = 0; ix < nx - 1; ++ix) {
        const double mu_face = 0.5 * (mu[row + ix] + mu[row + ix + 1]);
        sx[row + ix] =
            (sx[row + ix] +
             dt * mu_face * (v[row + ix + 1] - v[row + ix]) / dx) *
            sponge_fx[row + ix];
      }
    }
    for (int iz = 0; iz < nz - 1; ++iz) {
      const std::size_t row = std::size_t(iz) * nx;
      for (int ix = 0; ix < nx; ++ix) {
        const double mu_face = 0.5 * (mu[row + ix] + mu[row + nx + ix]);
        sz[row + ix] =
            (sz[row + ix] +
             dt * mu_face * (v[row + nx + ix] - v[row + ix]) / dz) *
            sponge_fz[row + ix];
      }
    }
    // Velocity update; displacement integrates the velocity.
    for (int iz = 0; iz < nz; ++iz) {
      const std::size_t row = std::size_t(iz) * nx;
      for (int ix = 0; ix < nx; ++ix) {
        const std::size_t i = row + ix;
        const double dsx = (sx[i] - (ix > 0 ? sx[i - 1] : 0.0)) / dx;
        const double dsz = (sz[i] - (iz > 0 ? sz[i - nx] : 0.0)) / dz;
        double acc = dsx + dsz;
        if (forced) acc += arf.f_n_m3[i];
        v[i] = (v[i] + inv_rho_dt * acc) * sponge[i];
        u[i] += v[i] * dt;
      }
    }
    if (step % steps_per_frame == 0) {
      const int fr = step / steps_per_frame;
      float* dst = out.u_um.data() + std::size_t(fr) * n;
      for (std::size_t i = 0; i < n; ++i) {
        const double um = u[i] * 1e6;
        if (!std::isfinite(um))
          throw NumericalError("solver instability at step " +
                               std::to_string(step));
        dst[i] = float(um);
      }
    }
  }
  return out;
}

namespace {

// Bilinear sample of one frame at FOV position (x_mm, z_mm).
double sample_frame(const float* frame, int nx, int nz, double dx_mm,
                    double dz_mm, double x_mm, double z_mm) {
  double fx = x_mm / dx_mm - 0.5;
  double fz = z_mm / dz_mm - 0.5;
  fx = std::max(0.0, std::min(double(nx - 1), fx));
  fz = std::max(0.0, std::min(double(nz - 1), fz));
  const int ix = std::min(int(fx), nx - 2);
  const int iz = std::min(int(fz), nz - 2);
  const double ax = fx - ix, az = fz - iz;
  const double v00 = frame[std::size_t(iz) * nx + ix];
  const double v01 = frame[std::size_t(iz) * nx + ix + 1];
  const double v10 = frame[std::size_t(iz + 1) * nx + ix];
  const double v11 = frame[std::size_t(iz + 1) * nx + ix + 1];
  return (1 - az) * ((1 - ax) * v00 + ax * v01) +
         az * ((1 - ax) * v10 + ax * v11);
}

}  // namespace

std::vector<MotionVolume> acquire_sequence(const MaterialField& field,
                                           const AcquisitionConfig& acq,
                                           const GridSpec& grid) {
  acq.validate();
  acq.geo.validate();
  const RoiGeometry& geo = acq.geo;
  if (acq.n_pushes != geo.n_regions)
    throw ConfigError("n_pushes must match the subregion count");
  if (!acq.push_lateral_offsets_mm.empty() &&
      int(acq.push_lateral_offsets_mm.size()) != acq.n_pushes)
    throw ConfigError("push offset list does not match n_pushes");

  const double frame_dt = 1.0 / acq.prf_hz;
  const int A = acq.subregion_axial_px;
  const int Lr = acq.raw_lateral_lines;
  const int L = acq.lateral_interp_to;
  if (A * geo.axial_pitch_mm > geo.roi_d_mm + 1e-9)
    throw GeometryError("axial subregion extent exceeds the ROI depth");

  std::vector<MotionVolume> out;
  out.reserve(acq.n_pushes);
  for (int k = 0; k < acq.n_pushes; ++k) {
    const double rx0 = geo.region_x0_mm(k);
    if (rx0 + geo.region_w_mm > geo.fov_w_mm + 1e-9)
      throw GeometryError("subregion " + std::to_string(k) +
                          " extends outside the FOV");
    PushConfig push = acq.push;
    push.x0_mm = acq.push_lateral_offsets_mm.empty()
                     ? rx0 - acq.push_gap_mm
                     : acq.push_lateral_offsets_mm[k];
    push.z0_mm = geo.roi_z0_mm + geo.roi_d_mm / 2.0;
    if (push.x0_mm < 0 || push.x0_mm > geo.fov_w_mm)
      throw GeometryError("push focus outside the FOV");

    MotionVolume sim = simulate_push(field, push, grid, acq.n_frames, frame_dt);

    // Track A x Lr raw lines over subregion k, then interpolate laterally.
    MotionVolume vol;
    vol.t = acq.n_frames;
    vol.a = A;
    vol.l = L;
    vol.u_um.assign(std::size_t(vol.t) * A * L, 0.0f);
    vol.frame_dt_s = frame_dt;
    vol.pitch_ax_mm = geo.axial_pitch_mm;
    vol.pitch_lat_mm = geo.region_w_mm / L;

    const double raw_pitch = geo.region_w_mm / Lr;
    std::vector<double> raw(std::size_t(A) * Lr);
    std::vector<double> raw_x(Lr), out_x(L);
    for (int j = 0; j < Lr; ++j) raw_x[j] = rx0 + (j + 0.5) * raw_pitch;
    for (int j = 0; j < L; ++j)
      out_x[j] = rx0 + (j + 0.5) * vol.pitch_lat_mm;

    const std::size_t frame_sz = std::size_t(sim.a) * sim.l;
    for (int t = 0; t < acq.n_frames; ++t) {
      const float* frame = sim.u_um.data() + std::size_t(t) * frame_sz;
      for (int ia = 0; ia < A; ++ia) {
        const double z = geo.roi_z0_mm + (ia + 0.5) * geo.axial_pitch_mm;
        for (int j = 0; j < Lr; ++j)
          raw[std::size_t(ia) * Lr + j] = sample_frame(
              frame, sim.l, sim.a, field.dx_mm, field.dz_mm, raw_x[j], z);
        // Linear interpolation from tracking lines to the output pitch.
        for (int j = 0; j < L; ++j) {
          double p = (out_x[j] - raw_x[0]) / raw_pitch;
          p = std::max(0.0, std::min(double(Lr - 1), p));
          const int j0 = std::min(int(p), Lr - 2);
          const double f = p - j0;
          vol.at(t, ia, j) =
              float((1 - f) * raw[std::size_t(ia) * Lr + j0] +
                    f * raw[std::size_t(ia) * Lr + j0 + 1]);
        }
      }
    }

    if (acq.peak_norm_um > 0) {
      float peak = 0.0f;
      for (float v : vol.u_um) peak = std::max(peak, std::abs(v));
      if (peak > 0) {
        const float s = float(acq.peak_norm_um) / peak;
        for (float& v : vol.u_um) v *= s;
      }
    }
    out.push_back(std::move(vol));
  }
  return out;
}

MotionVolume add_noise(const MotionVolume& vol, double snr_db,
                       std::uint64_t seed) {
  if (std::isinf(snr_db) && snr_db > 0) return vol;
  if (!std::isfinite(snr_db)) throw ConfigError("snr_db must be finite or +inf");
  double p_sig = 0.0;
  for (float v : vol.u_um) p_sig += double(v) * double(v);
  p_sig /= double(vol.u_um.size());
  if (p_sig <= 0)
    throw DataError("SNR undefined for an all-zero motion volume");
  const double sigma = std::sqrt(p_sig / std::pow(10.0, snr_db / 10.0));
  Rng rng(mix_seed(seed, 0xA0153));
  MotionVolume out = vol;
  for (float& v : out.u_um) v += float(sigma * rng.gaussian());
  return out;
}

double measure_snr_db(const MotionVolume& clean, const MotionVolume& noisy) {
  if (clean.size() != noisy.size())
    throw ContractError("measure_snr_db: shape mismatch");
  double p_sig = 0.0, p_noise = 0.0;
  for (std::size_t i = 0; i < clean.u_um.size(); ++i) {
    const double s = clean.u_um[i];
    const double d = double(noisy.u_um[i]) - s;
    p_sig += s * s;
    p_noise += d * d;
  }
  if (p_noise <= 0) return kSnrInf;
  return 10.0 * std::log10(p_sig / p_noise);
}

double tof_speed(const MotionVolume& vol, int l1, int l2) {
  if (l1 < 0 || l2 < 0 || l1 >= vol.l || l2 >= vol.l || l1 == l2)
    throw ConfigError("tof_speed: bad lateral pair");
  // Pick the axial row carrying the most energy at the two columns.
  int best_row = 0;
  double best_e = -1.0;
  for (int ia = 0; ia < vol.a; ++ia) {
    double e = 0.0;
    for (int t = 0; t < vol.t; ++t) {
      e += double(vol.at(t, ia, l1)) * vol.at(t, ia, l1);
      e += double(vol.at(t, ia, l2)) * vol.at(t, ia, l2);
    }
    if (e > best_e) {
      best_e = e;
      best_row = ia;
    }
  }
  // Correlate frame-differenced (particle velocity) profiles: the 2D wave
  // tail in raw displacement biases the correlation peak toward short lags.
  const int n = vol.t - 1;
  std::vector<double> p1(n), p2(n);
  for (int t = 0; t < n; ++t) {
    p1[t] = double(vol.at(t + 1, best_row, l1)) - vol.at(t, best_row, l1);
    p2[t] = double(vol.at(t + 1, best_row, l2)) - vol.at(t, best_row, l2);
  }
  // Full cross-correlation; positive lag means arrival at l2 after l1.
  const int max_lag = n - 1;
  int best_lag = 0;
  double best_r = -std::numeric_limits<double>::infinity();
  std::vector<double> corr(2 * max_lag + 1);
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    double r = 0.0;
    for (int t = 0; t < n; ++t) {
      const int t2 = t + lag;
      if (t2 < 0 || t2 >= n) continue;
      r += p1[t] * p2[t2];
    }
    corr[lag + max_lag] = r;
    if (r > best_r) {
      best_r = r;
      best_lag = lag;
    }
  }
  if (best_lag == 0)
    throw EstimateError("tof_speed: correlation peak at zero lag");
  if (std::abs(best_lag) >= max_lag)
    throw EstimateError("tof_speed: correlation peak at the window edge");
  // Parabolic sub-sample refinement around the peak.
  const double rm = corr[best_lag - 1 + max_lag];
  const double r0 = corr[best_lag + max_lag];
  const double rp = corr[best_lag + 1 + max_lag];
  double delta = 0.0;
  const double denom = rm - 2.0 * r0 + rp;
  if (std::abs(denom) > 1e-30) delta = 0.5 * (rm - rp) / denom;
  delta = std::max(-0.5, std::min(0.5, delta));
  const double lag_s = (best_lag + delta) * vol.frame_dt_s;
  const double dist_m = std::abs(l2 - l1) * vol.pitch_lat_mm * 1e-3;
  return dist_m / std::abs(lag_s);
}

}  // namespace swe
