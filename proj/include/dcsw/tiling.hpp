#pragma once

#include <cstddef>
#include <vector>

#include "dcsw/ct.hpp"
#include "dcsw/model.hpp"

namespace dcsw {

struct TileOptions {
  std::size_t tile = 160;
  std::size_t overlap = 16;

  void validate() const;
};

/// Start offsets of tiles of length `tile` covering [0, extent), consecutive
/// tiles sharing at least `overlap` pixels. The last tile ends at `extent`.
std::vector<std::size_t> tile_starts(std::size_t extent, std::size_t tile, std::size_t overlap);

/// Blend weight of position `i` in a tile of length `len`: a raised cosine
/// over the first/last `overlap` pixels unless that side touches the image
/// border, 1 elsewhere. Always positive.
double blend_weight(std::size_t i, std::size_t len, std::size_t overlap, bool ramp_low,
                    bool ramp_high);

/// Generator applied to a whole unit-scaled slice in one pass.
Slice denoise_full(const GeneratorConfig& cfg, const ParameterStore& params, const Slice& unit);

/// Generator applied tile by tile. Each tile is evaluated with a context
/// margin of at least the receptive radius, so tiles reproduce the whole-slice
/// output; overlaps are blended with cosine weights.
Slice denoise_tiled(const GeneratorConfig& cfg, const ParameterStore& params, const Slice& unit,
                    const TileOptions& options = {});

}  // namespace dcsw
