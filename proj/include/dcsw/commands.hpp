#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "dcsw/metrics.hpp"
#include "dcsw/run_config.hpp"

namespace dcsw {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumerical = 4,
};

/// Paired slices of a generated dataset directory.
struct Dataset {
  std::map<std::string, std::string> meta;
  std::vector<std::size_t> ids;
  std::vector<Slice> ldct;
  std::vector<Slice> ndct;
};

std::string slice_name(std::size_t id, const std::string& suffix);
std::map<std::string, std::string> read_meta(const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Number of trailing slices held out for validation.
std::size_t validation_count(std::size_t slices, double fraction);

/// `cfg.patches` aligned patches spread evenly over the slices at
/// `indices`, lesion-biased when the dataset metadata allows regenerating
/// the phantoms.
std::vector<PatchPair> training_patches(const Dataset& data, const std::vector<std::size_t>& indices,
                                        const RunConfig& cfg);

struct ValidationRow {
  std::string id;
  double psnr_low = 0.0;
  double psnr_den = 0.0;
  double ssim_low = 0.0;
  double ssim_den = 0.0;
};

std::vector<ValidationRow> validate_generator(const Dataset& data,
                                              const std::vector<std::size_t>& indices,
                                              const RunConfig& cfg, const ParameterStore& params);

std::string train_csv_header();
std::string train_csv_row(const TrainRecord& rec);

void cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void cmd_train(RunConfig cfg, const std::filesystem::path& rundir, bool resume, std::ostream& log);
void cmd_denoise(const RunConfig& cfg, const std::filesystem::path& ckpt,
                 const std::filesystem::path& in, const std::filesystem::path& out,
                 std::ostream& log);
MetricReport cmd_evaluate(const std::filesystem::path& denoised,
                          const std::filesystem::path& reference, const std::filesystem::path& out,
                          std::ostream& log);

/// Applies DCSW_THREADS (0 or unset: library default).
void apply_thread_limit();

/// Full command-line front end; returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dcsw
