#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "dcsw/ct.hpp"

namespace dcsw {

/// sqrt(mean((a - b)²)).
double rmse(const Slice& a, const Slice& b);

/// 20·log10(max_val / rmse). Identical images give +infinity.
double psnr(const Slice& a, const Slice& b, double max_val = 1.0);
double psnr_from_rmse(double rmse_value, double max_val = 1.0);

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

/// Mean of the SSIM map over all fully contained Gaussian windows.
double ssim(const Slice& a, const Slice& b, const SsimParams& params = {});

struct MetricRow {
  std::string id;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double rmse = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

struct MetricReport {
  std::vector<MetricRow> rows;
  Aggregate psnr_db, ssim, rmse;

  /// Recomputes aggregates from rows.
  void finalize();
  /// True when every row satisfies psnr = -20·log10(rmse) within `tol_db`.
  bool consistent(double tol_db = 1e-3) const;
};

MetricRow evaluate_pair(const std::string& id, const Slice& denoised, const Slice& reference);

/// Pairs files by their numeric id prefix ("0003_den.ctf" ↔ "0003_full.ctf").
/// In the reference directory "_full" files are preferred; in the denoised
/// directory "_den", then "_low". Throws DataError when the id sets differ.
MetricReport evaluate_run(const std::filesystem::path& denoised_dir,
                          const std::filesystem::path& reference_dir);

/// "id,psnr_db,ssim,rmse" rows followed by "mean" and "std" rows.
std::string report_csv(const MetricReport& report);

}  // namespace dcsw
