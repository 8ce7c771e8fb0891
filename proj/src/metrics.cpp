#include "dcsw/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "dcsw/errors.hpp"

namespace dcsw {

namespace {

void require_comparable(const Slice& a, const Slice& b, const char* what) {
  if (a.width != b.width || a.height != b.height) {
    throw UsageError(std::string(what) + ": image sizes differ");
  }
  if (a.values.empty()) throw UsageError(std::string(what) + ": empty images");
}

std::vector<double> gaussian_window(const SsimParams& p) {
  std::vector<double> w(p.window);
  const double c = (static_cast<double>(p.window) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < p.window; ++i) {
    const double d = static_cast<double>(i) - c;
    w[i] = std::exp(-d * d / (2.0 * p.sigma * p.sigma));
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

// Separable "valid" filtering of an image with a 1-D kernel along both axes.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t w, std::size_t h,
                                 const std::vector<double>& k) {
  const std::size_t n = k.size(), ow = w - n + 1, oh = h - n + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * img[r * w + c + i];
      rows[r * ow + c] = acc;
    }
  }
  std::vector<double> out(oh * ow);
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k[i] * rows[(r + i) * ow + c];
      out[r * ow + c] = acc;
    }
  }
  return out;
}

std::string format_value(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

Aggregate aggregate(const std::vector<double>& v) {
  Aggregate a;
  if (v.empty()) return a;
  double s = 0.0;
  for (double x : v) s += x;
  a.mean = s / static_cast<double>(v.size());
  if (std::isinf(a.mean)) {
    a.std = 0.0;
    return a;
  }
  double q = 0.0;
  for (double x : v) q += (x - a.mean) * (x - a.mean);
  a.std = std::sqrt(q / static_cast<double>(v.size()));
  return a;
}

std::map<std::string, std::filesystem::path> index_dir(const std::filesystem::path& dir,
                                                       const std::vector<std::string>& prefer) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::map<std::string, std::vector<std::filesystem::path>> by_id;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".ctf") continue;
    const std::string stem = entry.path().stem().string();
    const std::string id = stem.substr(0, stem.find('_'));
    by_id[id].push_back(entry.path());
  }
  std::map<std::string, std::filesystem::path> out;
  for (auto& [id, files] : by_id) {
    std::sort(files.begin(), files.end());
    if (files.size() == 1) {
      out[id] = files.front();
      continue;
    }
    bool found = false;
    for (const auto& suffix : prefer) {
      for (const auto& f : files) {
        if (f.stem().string() == id + "_" + suffix) {
          out[id] = f;
          found = true;
          break;
        }
      }
      if (found) break;
    }
    if (!found) throw DataError("ambiguous files for id " + id + " in " + dir.string());
  }
  return out;
}

}  // namespace

double rmse(const Slice& a, const Slice& b) {
  require_comparable(a, b, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(a.values.size()));
}

double psnr_from_rmse(double rmse_value, double max_val) {
  if (rmse_value == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(max_val / rmse_value);
}

double psnr(const Slice& a, const Slice& b, double max_val) {
  return psnr_from_rmse(rmse(a, b), max_val);
}

double ssim(const Slice& a, const Slice& b, const SsimParams& p) {
  require_comparable(a, b, "ssim");
  if (a.width < p.window || a.height < p.window) {
    throw UsageError("ssim: image " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                     " smaller than the " + std::to_string(p.window) + "x" +
                     std::to_string(p.window) + " window");
  }
  const auto k = gaussian_window(p);
  const std::size_t w = a.width, h = a.height;
  std::vector<double> aa(a.values.size()), bb(a.values.size()), ab(a.values.size());
  for (std::size_t i = 0; i < aa.size(); ++i) {
    aa[i] = a.values[i] * a.values[i];
    bb[i] = b.values[i] * b.values[i];
    ab[i] = a.values[i] * b.values[i];
  }
  const auto mu_a = filter_valid(a.values, w, h, k);
  const auto mu_b = filter_valid(b.values, w, h, k);
  const auto e_aa = filter_valid(aa, w, h, k);
  const auto e_bb = filter_valid(bb, w, h, k);
  const auto e_ab = filter_valid(ab, w, h, k);
  const double c1 = (p.k1 * p.data_range) * (p.k1 * p.data_range);
  const double c2 = (p.k2 * p.data_range) * (p.k2 * p.data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

void MetricReport::finalize() {
  std::vector<double> p, s, r;
  for (const auto& row : rows) {
    p.push_back(row.psnr_db);
    s.push_back(row.ssim);
    r.push_back(row.rmse);
  }
  psnr_db = aggregate(p);
  ssim = aggregate(s);
  rmse = aggregate(r);
}

bool MetricReport::consistent(double tol_db) const {
  for (const auto& row : rows) {
    if (row.rmse == 0.0) {
      if (!std::isinf(row.psnr_db)) return false;
      continue;
    }
    if (std::fabs(row.psnr_db + 20.0 * std::log10(row.rmse)) > tol_db) return false;
  }
  return true;
}

MetricRow evaluate_pair(const std::string& id, const Slice& denoised, const Slice& reference) {
  if (denoised.unit != SliceUnit::unit || reference.unit != SliceUnit::unit) {
    throw DataError("metrics require unit-scaled slices (pair " + id + ")");
  }
  MetricRow row;
  row.id = id;
  row.rmse = rmse(denoised, reference);
  row.psnr_db = psnr_from_rmse(row.rmse);
  row.ssim = ssim(denoised, reference);
  return row;
}

MetricReport evaluate_run(const std::filesystem::path& denoised_dir,
                          const std::filesystem::path& reference_dir) {
  const auto denoised = index_dir(denoised_dir, {"den", "low", "full"});
  const auto reference = index_dir(reference_dir, {"full", "den", "low"});
  if (denoised.empty()) throw DataError("no .ctf files in " + denoised_dir.string());
  for (const auto& [id, path] : denoised) {
    if (!reference.count(id)) throw DataError("no reference for id " + id);
  }
  for (const auto& [id, path] : reference) {
    if (!denoised.count(id)) throw DataError("no denoised slice for id " + id);
  }
  MetricReport report;
  for (const auto& [id, path] : denoised) {
    report.rows.push_back(evaluate_pair(id, import_raw(path), import_raw(reference.at(id))));
  }
  report.finalize();
  return report;
}

std::string report_csv(const MetricReport& report) {
  std::ostringstream os;
  os << "id,psnr_db,ssim,rmse\n";
  for (const auto& r : report.rows) {
    os << r.id << ',' << format_value(r.psnr_db) << ',' << format_value(r.ssim) << ','
       << format_value(r.rmse) << '\n';
  }
  os << "mean," << format_value(report.psnr_db.mean) << ',' << format_value(report.ssim.mean)
     << ',' << format_value(report.rmse.mean) << '\n';
  os << "std," << format_value(report.psnr_db.std) << ',' << format_value(report.ssim.std) << ','
     << format_value(report.rmse.std) << '\n';
  return os.str();
}

}  // namespace dcsw
