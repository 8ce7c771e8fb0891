#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "dcsw/checkpoint.hpp"
#include "dcsw/ct.hpp"
#include "dcsw/errors.hpp"

namespace dcsw {

namespace {

constexpr char kCtfMagic[4] = {'C', 'T', 'F', '1'};
constexpr std::size_t kCtfHeader = 4 + 4 + 4 + 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> encode_ctf(const Slice& slice) {
  if (slice.values.size() != slice.width * slice.height) {
    throw UsageError("encode_ctf: slice storage does not match its extents");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kCtfHeader + 4 * slice.values.size());
  out.insert(out.end(), kCtfMagic, kCtfMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(slice.width));
  put_u32(out, static_cast<std::uint32_t>(slice.height));
  out.push_back(static_cast<std::uint8_t>(slice.unit));
  for (double v : slice.values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

Slice decode_ctf(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kCtfHeader || std::memcmp(bytes.data(), kCtfMagic, 4) != 0) {
    throw DataError("malformed .ctf header");
  }
  const std::uint32_t w = get_u32(bytes.data() + 4), h = get_u32(bytes.data() + 8);
  const std::uint8_t unit = bytes[12];
  if (unit > static_cast<std::uint8_t>(SliceUnit::attenuation)) {
    throw DataError("malformed .ctf header: unknown unit tag " + std::to_string(unit));
  }
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() != kCtfHeader + 4 * n) {
    throw DataError("malformed .ctf: expected " + std::to_string(kCtfHeader + 4 * n) +
                    " bytes, found " + std::to_string(bytes.size()));
  }
  Slice s(w, h, static_cast<SliceUnit>(unit));
  for (std::size_t i = 0; i < n; ++i) {
    s.values[i] = std::bit_cast<float>(get_u32(bytes.data() + kCtfHeader + 4 * i));
  }
  return s;
}

void export_raw(const Slice& slice, const std::filesystem::path& path) {
  write_file_bytes(path, encode_ctf(slice));
}

Slice import_raw(const std::filesystem::path& path) { return decode_ctf(read_file_bytes(path)); }

std::vector<std::uint8_t> window_to_gray(const Slice& hu, const HUWindow& window) {
  window.validate();
  if (hu.unit != SliceUnit::hu) throw UsageError("window_to_gray: slice is not in HU");
  std::vector<std::uint8_t> gray(hu.values.size());
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const double t = (hu.values[i] - window.lo) / (window.hi - window.lo);
    gray[i] = static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
  }
  return gray;
}

void export_png(const Slice& slice, const HUWindow& window, const std::filesystem::path& path) {
  const Slice hu = slice.unit == SliceUnit::unit ? hu_unscale(slice) : slice;
  const auto gray = window_to_gray(hu, window);

  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!file) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(hu.width), static_cast<png_uint_32>(hu.height),
               8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < hu.height; ++r) {
    png_write_row(png, const_cast<png_bytep>(gray.data() + r * hu.width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace dcsw
