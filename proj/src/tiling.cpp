#include "dcsw/tiling.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dcsw/errors.hpp"

namespace dcsw {

namespace {

Tensor slice_tensor(const Slice& s, std::size_t row0, std::size_t col0, std::size_t h,
                    std::size_t w) {
  std::vector<double> v(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    std::copy_n(s.values.begin() + static_cast<std::ptrdiff_t>((row0 + r) * s.width + col0), w,
                v.begin() + static_cast<std::ptrdiff_t>(r * w));
  }
  return Tensor({1, 1, h, w}, std::move(v));
}

void require_unit(const Slice& s) {
  if (s.unit != SliceUnit::unit) throw DataError("denoising expects a unit-scaled slice");
  if (s.width < kMinGeneratorExtent || s.height < kMinGeneratorExtent) {
    throw UsageError("slice smaller than " + std::to_string(kMinGeneratorExtent) + " pixels");
  }
}

}  // namespace

void TileOptions::validate() const {
  if (tile < kMinGeneratorExtent) {
    throw ConfigError("tile size must be >= " + std::to_string(kMinGeneratorExtent));
  }
  if (overlap >= tile) throw ConfigError("tile overlap must be smaller than the tile");
}

std::vector<std::size_t> tile_starts(std::size_t extent, std::size_t tile, std::size_t overlap) {
  if (tile >= extent) return {0};
  const std::size_t stride = tile - overlap;
  std::vector<std::size_t> starts;
  for (std::size_t s = 0;; s += stride) {
    if (s + tile >= extent) {
      starts.push_back(extent - tile);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

double blend_weight(std::size_t i, std::size_t len, std::size_t overlap, bool ramp_low,
                    bool ramp_high) {
  double w = 1.0;
  const auto ramp = [overlap](std::size_t d) {
    return 0.5 - 0.5 * std::cos(std::numbers::pi * (static_cast<double>(d) + 0.5) /
                                static_cast<double>(overlap));
  };
  if (overlap == 0) return w;
  if (ramp_low && i < overlap) w = std::min(w, ramp(i));
  if (ramp_high && len - 1 - i < overlap) w = std::min(w, ramp(len - 1 - i));
  return w;
}

Slice denoise_full(const GeneratorConfig& cfg, const ParameterStore& params, const Slice& unit) {
  require_unit(unit);
  NoGradGuard no_grad;
  const Tensor out =
      generator_forward(cfg, params, slice_tensor(unit, 0, 0, unit.height, unit.width));
  Slice result(unit.width, unit.height, SliceUnit::unit);
  std::copy(out.values().begin(), out.values().end(), result.values.begin());
  return result;
}

Slice denoise_tiled(const GeneratorConfig& cfg, const ParameterStore& params, const Slice& unit,
                    const TileOptions& options) {
  options.validate();
  require_unit(unit);
  const std::size_t th = std::min(options.tile, unit.height);
  const std::size_t tw = std::min(options.tile, unit.width);
  const auto rows = tile_starts(unit.height, th, options.overlap);
  const auto cols = tile_starts(unit.width, tw, options.overlap);
  const std::size_t halo = cfg.receptive_radius();

  const std::size_t n = unit.values.size();
  std::vector<double> acc(n, 0.0), wsum(n, 0.0), first(n, 0.0);
  // Tracks whether every tile produced the same value for a pixel; such pixels
  // keep that value instead of a rounded weighted mean.
  std::vector<std::uint8_t> seen(n, 0), agree(n, 1);

  NoGradGuard no_grad;
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    for (std::size_t ci = 0; ci < cols.size(); ++ci) {
      const std::size_t r0 = rows[ri], c0 = cols[ci];
      const std::size_t er0 = r0 >= halo ? r0 - halo : 0;
      const std::size_t ec0 = c0 >= halo ? c0 - halo : 0;
      const std::size_t er1 = std::min(unit.height, r0 + th + halo);
      const std::size_t ec1 = std::min(unit.width, c0 + tw + halo);
      const std::size_t eh = er1 - er0, ew = ec1 - ec0;
      const Tensor out = generator_forward(cfg, params, slice_tensor(unit, er0, ec0, eh, ew));
      const auto v = out.values();
      for (std::size_t r = 0; r < th; ++r) {
        const double wr = blend_weight(r, th, options.overlap, ri > 0, ri + 1 < rows.size());
        for (std::size_t c = 0; c < tw; ++c) {
          const double wc = blend_weight(c, tw, options.overlap, ci > 0, ci + 1 < cols.size());
          const double value = v[(r0 + r - er0) * ew + (c0 + c - ec0)];
          const std::size_t idx = (r0 + r) * unit.width + (c0 + c);
          acc[idx] += wr * wc * value;
          wsum[idx] += wr * wc;
          if (!seen[idx]) {
            seen[idx] = 1;
            first[idx] = value;
          } else if (value != first[idx]) {
            agree[idx] = 0;
          }
        }
      }
    }
  }
  Slice result(unit.width, unit.height, SliceUnit::unit);
  for (std::size_t i = 0; i < n; ++i) {
    result.values[i] = agree[i] ? first[i] : acc[i] / wsum[i];
  }
  return result;
}

}  // namespace dcsw
