#include <algorithm>
#include <cmath>
#include <numbers>

#include "dcsw/ct.hpp"
#include "dcsw/errors.hpp"

namespace dcsw {

std::string to_string(SliceUnit unit) {
  switch (unit) {
    case SliceUnit::hu:
      return "HU";
    case SliceUnit::unit:
      return "unit";
    case SliceUnit::attenuation:
      return "attenuation";
  }
  return "?";
}

void HUWindow::validate() const {
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
    throw ConfigError("HU window [" + std::to_string(lo) + ", " + std::to_string(hi) +
                      "] is degenerate");
  }
}

Slice hu_scale(const Slice& hu, const HUWindow& window) {
  window.validate();
  if (hu.unit != SliceUnit::hu) throw UsageError("hu_scale: input slice is not in HU");
  Slice out(hu.width, hu.height, SliceUnit::unit);
  const double span = window.hi - window.lo;
  for (std::size_t i = 0; i < hu.values.size(); ++i) {
    out.values[i] = std::clamp((hu.values[i] - window.lo) / span, 0.0, 1.0);
  }
  return out;
}

Slice hu_unscale(const Slice& unit, const HUWindow& window) {
  window.validate();
  if (unit.unit != SliceUnit::unit) throw UsageError("hu_unscale: input slice is not unit-scaled");
  Slice out(unit.width, unit.height, SliceUnit::hu);
  for (std::size_t i = 0; i < unit.values.size(); ++i) {
    out.values[i] = window.lo + unit.values[i] * (window.hi - window.lo);
  }
  return out;
}

Slice hu_to_attenuation(const Slice& hu, double mu_water) {
  if (hu.unit != SliceUnit::hu) throw UsageError("hu_to_attenuation: input slice is not in HU");
  Slice out(hu.width, hu.height, SliceUnit::attenuation);
  for (std::size_t i = 0; i < hu.values.size(); ++i) {
    out.values[i] = std::max(0.0, mu_water * (1.0 + hu.values[i] / 1000.0));
  }
  return out;
}

Slice attenuation_to_hu(const Slice& mu, double mu_water) {
  if (mu.unit != SliceUnit::attenuation) {
    throw UsageError("attenuation_to_hu: input slice is not an attenuation image");
  }
  Slice out(mu.width, mu.height, SliceUnit::hu);
  for (std::size_t i = 0; i < mu.values.size(); ++i) {
    out.values[i] = 1000.0 * (mu.values[i] / mu_water - 1.0);
  }
  return out;
}

// ---------------------------------------------------------------------------

bool Ellipse::contains(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  const double c = std::cos(theta), s = std::sin(theta);
  const double u = dx * c + dy * s;
  const double v = -dx * s + dy * c;
  return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
}

double Ellipse::max_radius() const { return std::hypot(cx, cy) + std::max(a, b); }

double Ellipse::area() const { return std::numbers::pi * a * b; }

namespace {

constexpr double kBodyHU = 50.0;

bool inside(const Ellipse& outer, const Ellipse& inner) {
  constexpr int kSamples = 32;
  const double c = std::cos(inner.theta), s = std::sin(inner.theta);
  for (int k = 0; k < kSamples; ++k) {
    const double t = 2.0 * std::numbers::pi * k / kSamples;
    const double u = inner.a * std::cos(t), v = inner.b * std::sin(t);
    if (!outer.contains(inner.cx + u * c - v * s, inner.cy + u * s + v * c)) return false;
  }
  return true;
}

bool disjoint(const Ellipse& e, const Ellipse& f) {
  return std::hypot(e.cx - f.cx, e.cy - f.cy) > std::max(e.a, e.b) + std::max(f.a, f.b);
}

}  // namespace

Phantom generate_phantom(RngStream& rng, const PhantomOptions& options) {
  if (options.min_ellipses < 1 || options.max_ellipses < options.min_ellipses) {
    throw ConfigError("phantom: ellipse-count range must satisfy 1 <= min <= max");
  }
  Phantom p;
  const auto count = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(options.min_ellipses),
                      static_cast<std::int64_t>(options.max_ellipses)));

  Ellipse body;
  body.cx = rng.uniform(-0.04, 0.04);
  body.cy = rng.uniform(-0.04, 0.04);
  body.a = rng.uniform(0.72, 0.86);
  body.b = rng.uniform(0.55, 0.72);
  body.theta = rng.uniform(-0.15, 0.15);
  body.value = kBodyHU - kAirHU;
  p.ellipses.push_back(body);

  std::vector<Ellipse> organs, lesions;
  for (std::size_t k = 1; k < count; ++k) {
    const bool lesion = rng.uniform() < options.lesion_fraction;
    double shrink = 1.0;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 0 && attempt % 25 == 0) shrink *= 0.75;
      Ellipse e;
      e.lesion = lesion;
      e.theta = rng.uniform(0.0, std::numbers::pi);
      if (lesion) {
        e.a = shrink * rng.uniform(0.015, 0.04);
        e.b = shrink * rng.uniform(0.015, 0.04);
        const double contrast = rng.uniform(15.0, 60.0);
        e.value = rng.uniform() < 0.5 ? -contrast : contrast;
      } else {
        e.a = shrink * rng.uniform(0.06, 0.22);
        e.b = shrink * rng.uniform(0.06, 0.22);
        e.value = rng.uniform(-200.0, 400.0) - kBodyHU;
      }
      e.cx = body.cx + rng.uniform(-body.a, body.a);
      e.cy = body.cy + rng.uniform(-body.a, body.a);
      if (!inside(body, e)) continue;
      const auto& peers = lesion ? lesions : organs;
      if (!std::all_of(peers.begin(), peers.end(), [&](const Ellipse& f) { return disjoint(e, f); })) {
        continue;
      }
      (lesion ? lesions : organs).push_back(e);
      p.ellipses.push_back(e);
      break;
    }
  }
  return p;
}

Slice rasterize(const Phantom& phantom, std::size_t n) {
  if (n == 0) throw ConfigError("rasterize: grid size must be positive");
  Slice out(n, n, SliceUnit::hu, kAirHU);
  const double half = (static_cast<double>(n) - 1.0) / 2.0;
  const double step = 2.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double y = (half - static_cast<double>(r)) * step;
    for (std::size_t c = 0; c < n; ++c) {
      const double x = (static_cast<double>(c) - half) * step;
      double v = kAirHU;
      for (const auto& e : phantom.ellipses) {
        if (e.contains(x, y)) v += e.value;
      }
      out.at(r, c) = v;
    }
  }
  return out;
}

std::vector<PixelBox> lesion_boxes(const Phantom& phantom, std::size_t n) {
  std::vector<PixelBox> boxes;
  const double half = (static_cast<double>(n) - 1.0) / 2.0;
  const double scale = static_cast<double>(n) / 2.0;
  const auto clamp_px = [&](double v) {
    return static_cast<std::size_t>(std::clamp(std::round(v), 0.0, static_cast<double>(n - 1)));
  };
  for (const auto& e : phantom.ellipses) {
    if (!e.lesion) continue;
    const double c = std::cos(e.theta), s = std::sin(e.theta);
    const double ex = std::sqrt(e.a * e.a * c * c + e.b * e.b * s * s);
    const double ey = std::sqrt(e.a * e.a * s * s + e.b * e.b * c * c);
    boxes.push_back({clamp_px(half - (e.cy + ey) * scale), clamp_px(half - (e.cy - ey) * scale),
                     clamp_px(half + (e.cx - ex) * scale), clamp_px(half + (e.cx + ex) * scale)});
  }
  return boxes;
}

}  // namespace dcsw
