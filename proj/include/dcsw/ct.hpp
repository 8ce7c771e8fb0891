#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dcsw/rng.hpp"

namespace dcsw {

// ---------------------------------------------------------------------------
// Images

enum class SliceUnit : std::uint8_t { hu = 0, unit = 1, attenuation = 2 };

std::string to_string(SliceUnit unit);

/// Row-major height × width image. Row 0 is the top of the image.
struct Slice {
  std::size_t width = 0;
  std::size_t height = 0;
  SliceUnit unit = SliceUnit::hu;
  std::vector<double> values;

  Slice() = default;
  Slice(std::size_t w, std::size_t h, SliceUnit u, double fill = 0.0)
      : width(w), height(h), unit(u), values(w * h, fill) {}

  double& at(std::size_t row, std::size_t col) { return values[row * width + col]; }
  double at(std::size_t row, std::size_t col) const { return values[row * width + col]; }
};

struct HUWindow {
  double lo = -1024.0;
  double hi = 3071.0;

  void validate() const;
};

/// Full representable CT range; used to scale network inputs.
inline constexpr HUWindow kTrainingWindow{-1024.0, 3071.0};
/// Soft-tissue display window used for PNG export.
inline constexpr HUWindow kDisplayWindow{-160.0, 240.0};

/// v -> clamp((v - lo) / (hi - lo), 0, 1).
Slice hu_scale(const Slice& hu, const HUWindow& window = kTrainingWindow);
/// Inverse of hu_scale on [0, 1].
Slice hu_unscale(const Slice& unit, const HUWindow& window = kTrainingWindow);

inline constexpr double kMuWater = 0.02;  // 1/mm

/// μ = μ_water·(1 + HU/1000), floored at 0.
Slice hu_to_attenuation(const Slice& hu, double mu_water = kMuWater);
Slice attenuation_to_hu(const Slice& mu, double mu_water = kMuWater);

// ---------------------------------------------------------------------------
// Phantoms

/// Ellipse in normalized coordinates: the field of view is [-1,1]², x to the
/// right, y up. `value` is the HU contribution added on top of air.
struct Ellipse {
  double cx = 0.0, cy = 0.0;
  double a = 0.5, b = 0.5;  // semi-axes along the rotated x and y axes
  double theta = 0.0;       // radians, counter-clockwise
  double value = 0.0;       // HU
  bool lesion = false;

  bool contains(double x, double y) const;
  /// Largest distance from the origin of any point on the ellipse.
  double max_radius() const;
  double area() const;
};

struct Phantom {
  std::vector<Ellipse> ellipses;
};

inline constexpr double kAirHU = -1000.0;
inline constexpr double kMinHU = -1024.0;
inline constexpr double kMaxHU = 3071.0;

struct PhantomOptions {
  std::size_t min_ellipses = 6;
  std::size_t max_ellipses = 12;
  double lesion_fraction = 0.35;
};

/// Random body ellipse (~50 HU tissue) with non-overlapping interior
/// structures in [-200, 400] HU and small low-contrast lesions.
Phantom generate_phantom(RngStream& rng, const PhantomOptions& options = {});

/// Pixel value = air + Σ value of ellipses covering the pixel centre.
Slice rasterize(const Phantom& phantom, std::size_t n);

/// Pixel bounding box (inclusive) of an ellipse on an n×n grid.
struct PixelBox {
  std::size_t row0, row1, col0, col1;
};
std::vector<PixelBox> lesion_boxes(const Phantom& phantom, std::size_t n);

// ---------------------------------------------------------------------------
// Parallel-beam projection

struct ScanGeometry {
  std::size_t n_angles = 0;
  std::size_t n_detectors = 0;
  double pixel_mm = 1.0;  // image pixel and detector spacing

  /// Defaults for an n×n image over a field of view of `fov_mm`; n_angles = 0
  /// selects max(n/4, 16) views.
  static ScanGeometry for_image(std::size_t n, double fov_mm, std::size_t n_angles = 0);
};

/// Line integrals of attenuation, n_angles × n_detectors, angles i·π/n_angles.
struct Sinogram {
  ScanGeometry geometry;
  std::vector<double> values;

  double& at(std::size_t angle, std::size_t det) {
    return values[angle * geometry.n_detectors + det];
  }
  double at(std::size_t angle, std::size_t det) const {
    return values[angle * geometry.n_detectors + det];
  }
};

/// Ray-driven projector: bilinear samples every half pixel along each ray.
Sinogram radon_forward(const Slice& attenuation, const ScanGeometry& geometry);

/// counts ~ Poisson(I0·exp(-p)); p̂ = -ln(max(counts, 1)/I0). With
/// `clamp_counts` off, zero counts give +inf.
Sinogram simulate_lowdose(const Sinogram& sinogram, double i0, RngStream& rng,
                          bool clamp_counts = true);

/// Ram-Lak filtered backprojection to an n×n attenuation image.
Slice fbp_reconstruct_attenuation(const Sinogram& sinogram, std::size_t n);
/// fbp_reconstruct_attenuation followed by μ -> HU.
Slice fbp_reconstruct(const Sinogram& sinogram, std::size_t n, double mu_water = kMuWater);

// ---------------------------------------------------------------------------
// Paired slice synthesis

struct DoseSettings {
  double i0_full = 1e5;
  double i0_low = 2.5e4;
};

struct SynthesisOptions {
  std::size_t size = 512;
  double fov_mm = 400.0;
  std::size_t n_angles = 0;  // 0: derived from size
  DoseSettings dose;
  PhantomOptions phantom;
  bool add_noise = true;
};

struct SlicePair {
  Phantom phantom;
  Slice ndct;  // unit-scaled, training window
  Slice ldct;  // unit-scaled, training window
};

/// The phantom behind slice `slice_id` of a dataset generated with `seed`.
Phantom slice_phantom(std::uint64_t seed, std::size_t slice_id, const PhantomOptions& options);

/// Phantom -> sinogram -> (noiseless FBP, low-dose FBP), both unit-scaled.
/// Substreams "phantom/<id>" and "noise/<id>" make each slice independent of
/// generation order.
SlicePair synthesize_slice_pair(std::uint64_t seed, std::size_t slice_id,
                                const SynthesisOptions& options);

// ---------------------------------------------------------------------------
// Training patches

struct PatchPair {
  std::size_t size = 0;
  std::vector<double> x;  // LDCT, unit-scaled, size×size
  std::vector<double> y;  // NDCT, unit-scaled, size×size
  std::size_t slice_id = 0;
  std::size_t row = 0;
  std::size_t col = 0;
};

/// `count` aligned crops at uniformly random offsets. When `lesions` is
/// non-empty every even-indexed patch is placed to contain a lesion centre.
std::vector<PatchPair> extract_patches(const Slice& ldct, const Slice& ndct, std::size_t size,
                                       std::size_t count, RngStream& rng,
                                       std::size_t slice_id = 0,
                                       const std::vector<PixelBox>& lesions = {});

Slice crop(const Slice& s, std::size_t row, std::size_t col, std::size_t h, std::size_t w);

// ---------------------------------------------------------------------------
// File formats

/// Raw slice: "CTF1" | u32 width | u32 height | u8 unit | f32 LE values.
std::vector<std::uint8_t> encode_ctf(const Slice& slice);
Slice decode_ctf(const std::vector<std::uint8_t>& bytes);
void export_raw(const Slice& slice, const std::filesystem::path& path);
Slice import_raw(const std::filesystem::path& path);

/// Windowed linear map to 8-bit gray: round((v - lo)/(hi - lo)·255), clamped.
std::vector<std::uint8_t> window_to_gray(const Slice& hu, const HUWindow& window);
/// 8-bit grayscale PNG of an HU slice under `window`.
void export_png(const Slice& hu, const HUWindow& window, const std::filesystem::path& path);

}  // namespace dcsw
