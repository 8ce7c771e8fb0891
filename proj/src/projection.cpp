#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "dcsw/ct.hpp"
#include "dcsw/errors.hpp"

namespace dcsw {

namespace {

std::string slice_key(const char* prefix, std::size_t id) {
  return std::string(prefix) + "/" + std::to_string(id);
}

// Bilinear sample in pixel coordinates; zero outside the image.
double sample_bilinear(const Slice& img, double row, double col) {
  const double r0f = std::floor(row), c0f = std::floor(col);
  const auto r0 = static_cast<std::ptrdiff_t>(r0f), c0 = static_cast<std::ptrdiff_t>(c0f);
  const double fr = row - r0f, fc = col - c0f;
  const auto h = static_cast<std::ptrdiff_t>(img.height), w = static_cast<std::ptrdiff_t>(img.width);
  const auto px = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
    return (r < 0 || r >= h || c < 0 || c >= w) ? 0.0
                                                : img.values[static_cast<std::size_t>(r * w + c)];
  };
  return (1.0 - fr) * ((1.0 - fc) * px(r0, c0) + fc * px(r0, c0 + 1)) +
         fr * ((1.0 - fc) * px(r0 + 1, c0) + fc * px(r0 + 1, c0 + 1));
}

void check_geometry(const ScanGeometry& g) {
  if (g.n_angles == 0 || g.n_detectors == 0 || !(g.pixel_mm > 0.0)) {
    throw ConfigError("scan geometry needs angles, detectors and a positive pixel size");
  }
}

}  // namespace

ScanGeometry ScanGeometry::for_image(std::size_t n, double fov_mm, std::size_t n_angles) {
  if (n == 0 || !(fov_mm > 0.0)) throw ConfigError("scan geometry: invalid image size or FOV");
  ScanGeometry g;
  g.pixel_mm = fov_mm / static_cast<double>(n);
  // Odd detector count covering the image diagonal, centred on t = 0.
  g.n_detectors = 2 * static_cast<std::size_t>(std::ceil(static_cast<double>(n) / std::numbers::sqrt2)) + 1;
  // n/4 views puts quarter-dose noise in the clinical LDCT PSNR range.
  g.n_angles = n_angles > 0 ? n_angles : std::max<std::size_t>(n / 4, 16);
  return g;
}

Sinogram radon_forward(const Slice& mu, const ScanGeometry& geometry) {
  check_geometry(geometry);
  if (mu.unit != SliceUnit::attenuation) {
    throw UsageError("radon_forward: input must be an attenuation image");
  }
  if (mu.width != mu.height) throw UsageError("radon_forward: image must be square");
  Sinogram sino{geometry, std::vector<double>(geometry.n_angles * geometry.n_detectors, 0.0)};
  const double n = static_cast<double>(mu.width);
  const double half = (n - 1.0) / 2.0;
  const double det_half = (static_cast<double>(geometry.n_detectors) - 1.0) / 2.0;
  // Work in pixel units; scale line integrals to mm at the end.
  const double reach = n * std::numbers::sqrt2 / 2.0;
  const double ds = 0.5;
  const auto samples = static_cast<std::size_t>(std::ceil(2.0 * reach / ds));
  for (std::size_t i = 0; i < geometry.n_angles; ++i) {
    const double theta = std::numbers::pi * static_cast<double>(i) / static_cast<double>(geometry.n_angles);
    const double c = std::cos(theta), s = std::sin(theta);
    for (std::size_t j = 0; j < geometry.n_detectors; ++j) {
      const double t = static_cast<double>(j) - det_half;
      double acc = 0.0;
      for (std::size_t k = 0; k < samples; ++k) {
        const double along = -reach + (static_cast<double>(k) + 0.5) * ds;
        const double x = t * c - along * s;
        const double y = t * s + along * c;
        acc += sample_bilinear(mu, half - y, x + half);
      }
      sino.at(i, j) = acc * ds * geometry.pixel_mm;
    }
  }
  return sino;
}

Sinogram simulate_lowdose(const Sinogram& sinogram, double i0, RngStream& rng, bool clamp_counts) {
  if (!(i0 > 0.0) || !std::isfinite(i0)) throw ConfigError("simulate_lowdose: I0 must be positive");
  Sinogram out = sinogram;
  for (auto& p : out.values) {
    const double counts = static_cast<double>(rng.poisson(i0 * std::exp(-p)));
    const double kept = clamp_counts ? std::max(counts, 1.0) : counts;
    p = kept > 0.0 ? -std::log(kept / i0) : std::numeric_limits<double>::infinity();
  }
  return out;
}

Slice fbp_reconstruct_attenuation(const Sinogram& sinogram, std::size_t n) {
  const ScanGeometry& g = sinogram.geometry;
  check_geometry(g);
  if (sinogram.values.size() != g.n_angles * g.n_detectors) {
    throw DataError("fbp: sinogram size does not match its geometry");
  }
  if (n == 0) throw ConfigError("fbp: image size must be positive");
  const std::size_t nd = g.n_detectors;
  const double tau = g.pixel_mm;

  // Spatial Ram-Lak kernel sampled at the detector spacing.
  std::vector<double> kernel(2 * nd - 1, 0.0);
  for (std::size_t m = 0; m < kernel.size(); ++m) {
    const auto k = static_cast<std::ptrdiff_t>(m) - static_cast<std::ptrdiff_t>(nd - 1);
    if (k == 0) {
      kernel[m] = 1.0 / (4.0 * tau * tau);
    } else if (k % 2 != 0) {
      const double kd = static_cast<double>(k);
      kernel[m] = -1.0 / (kd * kd * std::numbers::pi * std::numbers::pi * tau * tau);
    }
  }

  std::vector<double> filtered(g.n_angles * nd, 0.0);
  for (std::size_t i = 0; i < g.n_angles; ++i) {
    const double* p = sinogram.values.data() + i * nd;
    double* q = filtered.data() + i * nd;
    for (std::size_t k = 0; k < nd; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < nd; ++j) acc += p[j] * kernel[k + nd - 1 - j];
      q[k] = acc * tau;
    }
  }

  Slice out(n, n, SliceUnit::attenuation, 0.0);
  const double half = (static_cast<double>(n) - 1.0) / 2.0;
  const double det_half = (static_cast<double>(nd) - 1.0) / 2.0;
  const double weight = std::numbers::pi / static_cast<double>(g.n_angles);
  for (std::size_t i = 0; i < g.n_angles; ++i) {
    const double theta = std::numbers::pi * static_cast<double>(i) / static_cast<double>(g.n_angles);
    const double c = std::cos(theta), s = std::sin(theta);
    const double* q = filtered.data() + i * nd;
    for (std::size_t r = 0; r < n; ++r) {
      const double y = half - static_cast<double>(r);
      for (std::size_t col = 0; col < n; ++col) {
        const double x = static_cast<double>(col) - half;
        const double t = x * c + y * s + det_half;
        const double tf = std::floor(t);
        const auto j = static_cast<std::ptrdiff_t>(tf);
        if (j < 0 || j + 1 >= static_cast<std::ptrdiff_t>(nd)) continue;
        const double f = t - tf;
        out.at(r, col) += weight * ((1.0 - f) * q[j] + f * q[j + 1]);
      }
    }
  }
  return out;
}

Slice fbp_reconstruct(const Sinogram& sinogram, std::size_t n, double mu_water) {
  return attenuation_to_hu(fbp_reconstruct_attenuation(sinogram, n), mu_water);
}

Phantom slice_phantom(std::uint64_t seed, std::size_t slice_id, const PhantomOptions& options) {
  RngStream rng(seed, slice_key("phantom", slice_id));
  return generate_phantom(rng, options);
}

SlicePair synthesize_slice_pair(std::uint64_t seed, std::size_t slice_id,
                                const SynthesisOptions& options) {
  SlicePair pair;
  pair.phantom = slice_phantom(seed, slice_id, options.phantom);
  const Slice mu = hu_to_attenuation(rasterize(pair.phantom, options.size));
  const ScanGeometry geometry =
      ScanGeometry::for_image(options.size, options.fov_mm, options.n_angles);
  const Sinogram clean = radon_forward(mu, geometry);
  pair.ndct = hu_scale(fbp_reconstruct(clean, options.size));
  if (options.add_noise) {
    RngStream noise_rng(seed, slice_key("noise", slice_id));
    pair.ldct = hu_scale(fbp_reconstruct(simulate_lowdose(clean, options.dose.i0_low, noise_rng),
                                         options.size));
  } else {
    pair.ldct = hu_scale(fbp_reconstruct(clean, options.size));
  }
  return pair;
}

}  // namespace dcsw
