#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dcsw/ct.hpp"
#include "dcsw/tiling.hpp"
#include "dcsw/train.hpp"

namespace dcsw {

/// Every tunable of a run. Text form is INI-like:
///
///   [train]
///   steps = 2000
///
/// Unknown sections or keys are rejected.
struct RunConfig {
  // [data]
  std::filesystem::path data_dir;
  std::size_t slices = 20;
  std::size_t size = 512;
  std::uint64_t data_seed = 0;
  double fov_mm = 400.0;
  std::size_t n_angles = 0;
  DoseSettings dose;
  std::size_t patch_size = 80;
  std::size_t patches = 200;
  double val_fraction = 0.2;
  bool lesion_bias = true;

  // [model], [loss], [train]
  TrainConfig train;

  // [eval]
  TileOptions tiles;
  bool png = false;
  HUWindow display = kDisplayWindow;

  /// Sets `section.key` from text; throws ConfigError for unknown keys or
  /// unparsable values.
  void set(const std::string& dotted_key, const std::string& value);
  void load_text(const std::string& text, const std::string& origin = "config");
  void load_file(const std::filesystem::path& path);
  /// Full effective configuration; load_text(to_text()) reproduces it.
  std::string to_text() const;
  std::vector<std::string> keys() const;

  /// Cross-field checks; propagates the patch size to the critic input.
  void finalize();
  SynthesisOptions synthesis() const;
};

}  // namespace dcsw
