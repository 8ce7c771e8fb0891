#include <algorithm>

#include "dcsw/ct.hpp"
#include "dcsw/errors.hpp"

namespace dcsw {

Slice crop(const Slice& s, std::size_t row, std::size_t col, std::size_t h, std::size_t w) {
  if (row + h > s.height || col + w > s.width) {
    throw UsageError("crop: region exceeds the slice");
  }
  Slice out(w, h, s.unit);
  for (std::size_t r = 0; r < h; ++r) {
    std::copy_n(s.values.begin() + static_cast<std::ptrdiff_t>((row + r) * s.width + col), w,
                out.values.begin() + static_cast<std::ptrdiff_t>(r * w));
  }
  return out;
}

std::vector<PatchPair> extract_patches(const Slice& ldct, const Slice& ndct, std::size_t size,
                                       std::size_t count, RngStream& rng, std::size_t slice_id,
                                       const std::vector<PixelBox>& lesions) {
  if (ldct.width != ndct.width || ldct.height != ndct.height) {
    throw UsageError("extract_patches: LDCT and NDCT slices differ in size");
  }
  if (size == 0 || ldct.width < size || ldct.height < size) {
    throw UsageError("extract_patches: slice " + std::to_string(ldct.width) + "x" +
                     std::to_string(ldct.height) + " smaller than patch size " +
                     std::to_string(size));
  }
  const auto max_row = static_cast<std::int64_t>(ldct.height - size);
  const auto max_col = static_cast<std::int64_t>(ldct.width - size);
  std::vector<PatchPair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::int64_t row = 0, col = 0;
    if (!lesions.empty() && i % 2 == 0) {
      const auto& box = lesions[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(lesions.size()) - 1))];
      const auto cr = static_cast<std::int64_t>((box.row0 + box.row1) / 2);
      const auto cc = static_cast<std::int64_t>((box.col0 + box.col1) / 2);
      const auto span = static_cast<std::int64_t>(size) - 1;
      row = rng.uniform_int(std::max<std::int64_t>(0, cr - span), std::min(max_row, cr));
      col = rng.uniform_int(std::max<std::int64_t>(0, cc - span), std::min(max_col, cc));
    } else {
      row = rng.uniform_int(0, max_row);
      col = rng.uniform_int(0, max_col);
    }
    PatchPair p;
    p.size = size;
    p.slice_id = slice_id;
    p.row = static_cast<std::size_t>(row);
    p.col = static_cast<std::size_t>(col);
    p.x = crop(ldct, p.row, p.col, size, size).values;
    p.y = crop(ndct, p.row, p.col, size, size).values;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace dcsw
