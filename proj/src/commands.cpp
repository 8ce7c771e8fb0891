#include "dcsw/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dcsw/checkpoint.hpp"
#include "dcsw/errors.hpp"

extern "C" void openblas_set_num_threads(int num_threads);

namespace dcsw {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

Slice clamp_unit(Slice s) {
  for (auto& v : s.values) v = std::clamp(v, 0.0, 1.0);
  return s;
}

std::string id_of(const fs::path& file) {
  const std::string stem = file.stem().string();
  return stem.substr(0, stem.find('_'));
}

std::size_t meta_size(const std::map<std::string, std::string>& meta, const std::string& key) {
  const auto it = meta.find(key);
  if (it == meta.end()) throw DataError("meta.txt lacks '" + key + "'");
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw DataError("meta.txt: invalid value for '" + key + "'");
  }
}

double meta_real(const std::map<std::string, std::string>& meta, const std::string& key) {
  const auto it = meta.find(key);
  if (it == meta.end()) throw DataError("meta.txt lacks '" + key + "'");
  try {
    return std::stod(it->second);
  } catch (const std::logic_error&) {
    throw DataError("meta.txt: invalid value for '" + key + "'");
  }
}

}  // namespace

std::string slice_name(std::size_t id, const std::string& suffix) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", id);
  return std::string(buf) + "_" + suffix + ".ctf";
}

std::map<std::string, std::string> read_meta(const fs::path& dir) {
  const fs::path path = dir / "meta.txt";
  if (!fs::exists(path)) throw DataError("no meta.txt in " + dir.string());
  std::map<std::string, std::string> meta;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("meta.txt: malformed line '" + line + "'");
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

Dataset load_dataset(const fs::path& dir) {
  Dataset data;
  data.meta = read_meta(dir);
  const std::size_t n = meta_size(data.meta, "slices");
  if (n == 0) throw DataError("dataset " + dir.string() + " is empty");
  for (std::size_t id = 0; id < n; ++id) {
    Slice low = import_raw(dir / slice_name(id, "low"));
    Slice full = import_raw(dir / slice_name(id, "full"));
    if (low.unit != SliceUnit::unit || full.unit != SliceUnit::unit) {
      throw DataError("slice " + std::to_string(id) + " is not unit-scaled");
    }
    if (low.width != full.width || low.height != full.height) {
      throw DataError("slice pair " + std::to_string(id) + " differs in size");
    }
    data.ids.push_back(id);
    data.ldct.push_back(std::move(low));
    data.ndct.push_back(std::move(full));
  }
  return data;
}

std::size_t validation_count(std::size_t slices, double fraction) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(slices) * fraction));
}

std::vector<PatchPair> training_patches(const Dataset& data, const std::vector<std::size_t>& indices,
                                        const RunConfig& cfg) {
  if (indices.empty()) throw DataError("no training slices");
  const bool lesions = cfg.lesion_bias && data.meta.count("seed") && data.meta.count("size") &&
                       data.meta.count("phantom_min_ellipses");
  PhantomOptions phantom;
  std::uint64_t seed = 0;
  if (lesions) {
    seed = std::stoull(data.meta.at("seed"));
    phantom.min_ellipses = meta_size(data.meta, "phantom_min_ellipses");
    phantom.max_ellipses = meta_size(data.meta, "phantom_max_ellipses");
    phantom.lesion_fraction = meta_real(data.meta, "lesion_fraction");
  }
  const std::size_t base = cfg.patches / indices.size();
  const std::size_t extra = cfg.patches % indices.size();
  std::vector<PatchPair> out;
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const std::size_t count = base + (j < extra ? 1 : 0);
    if (count == 0) continue;
    const std::size_t k = indices[j];
    const std::size_t id = data.ids[k];
    std::vector<PixelBox> boxes;
    if (lesions) boxes = lesion_boxes(slice_phantom(seed, id, phantom), data.ldct[k].width);
    RngStream rng(cfg.train.seed, "patches/" + std::to_string(id));
    auto patches =
        extract_patches(data.ldct[k], data.ndct[k], cfg.patch_size, count, rng, id, boxes);
    std::move(patches.begin(), patches.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<ValidationRow> validate_generator(const Dataset& data,
                                              const std::vector<std::size_t>& indices,
                                              const RunConfig& cfg, const ParameterStore& params) {
  std::vector<ValidationRow> rows;
  for (const std::size_t k : indices) {
    const Slice den = clamp_unit(denoise_tiled(cfg.train.generator, params, data.ldct[k], cfg.tiles));
    ValidationRow row;
    row.id = slice_name(data.ids[k], "").substr(0, 4);
    row.psnr_low = psnr(data.ldct[k], data.ndct[k]);
    row.psnr_den = psnr(den, data.ndct[k]);
    row.ssim_low = ssim(data.ldct[k], data.ndct[k]);
    row.ssim_den = ssim(den, data.ndct[k]);
    rows.push_back(row);
  }
  return rows;
}

std::string train_csv_header() { return "step,phase,loss,l1,gp,wall_ms\n"; }

std::string train_csv_row(const TrainRecord& rec) {
  return std::to_string(rec.step) + "," + rec.phase + "," + fmt("%.10g", rec.loss) + "," +
         fmt("%.10g", rec.l1) + "," + fmt("%.10g", rec.gp) + "," + fmt("%.3f", rec.wall_ms) + "\n";
}

void cmd_gen_data(const RunConfig& cfg_in, const fs::path& out, std::ostream& log) {
  RunConfig cfg = cfg_in;
  cfg.finalize();
  if (cfg.slices == 0) throw ConfigError("--slices must be >= 1");
  fs::create_directories(out);
  const SynthesisOptions opts = cfg.synthesis();
  for (std::size_t id = 0; id < cfg.slices; ++id) {
    const SlicePair pair = synthesize_slice_pair(cfg.data_seed, id, opts);
    export_raw(pair.ndct, out / slice_name(id, "full"));
    export_raw(pair.ldct, out / slice_name(id, "low"));
    log << "slice " << id + 1 << "/" << cfg.slices << "\n";
  }
  const PhantomOptions phantom = opts.phantom;
  std::ostringstream meta;
  meta << "format=ctf1\n"
       << "unit=unit\n"
       << "seed=" << cfg.data_seed << "\n"
       << "slices=" << cfg.slices << "\n"
       << "size=" << cfg.size << "\n"
       << "fov_mm=" << fmt("%.17g", cfg.fov_mm) << "\n"
       << "n_angles=" << ScanGeometry::for_image(cfg.size, cfg.fov_mm, cfg.n_angles).n_angles
       << "\n"
       << "i0_full=" << fmt("%.17g", cfg.dose.i0_full) << "\n"
       << "i0_low=" << fmt("%.17g", cfg.dose.i0_low) << "\n"
       << "window_lo=" << fmt("%.17g", kTrainingWindow.lo) << "\n"
       << "window_hi=" << fmt("%.17g", kTrainingWindow.hi) << "\n"
       << "phantom_min_ellipses=" << phantom.min_ellipses << "\n"
       << "phantom_max_ellipses=" << phantom.max_ellipses << "\n"
       << "lesion_fraction=" << fmt("%.17g", phantom.lesion_fraction) << "\n"
       << "counts=" << 2 * cfg.slices << "\n";
  write_text(out / "meta.txt", meta.str());
}

void cmd_train(RunConfig cfg, const fs::path& rundir, bool resume, std::ostream& log) {
  cfg.finalize();
  if (cfg.data_dir.empty()) throw ConfigError("no dataset directory given (--data)");
  const Dataset data = load_dataset(cfg.data_dir);
  const std::size_t n = data.ids.size();
  const std::size_t n_val = validation_count(n, cfg.val_fraction);
  if (n_val >= n) throw ConfigError("validation split leaves no training slices");
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t k = 0; k < n; ++k) (k < n - n_val ? train_idx : val_idx).push_back(k);
  const auto patches = training_patches(data, train_idx, cfg);

  fs::create_directories(rundir);
  const fs::path ckpt = rundir / "checkpoint.dcsw";
  const fs::path gen = rundir / "generator.dcsw";
  const fs::path csv = rundir / "train.csv";

  TrainState state;
  if (resume) {
    if (!fs::exists(ckpt)) throw DataError("nothing to resume: " + ckpt.string() + " missing");
    state = load_train_state(ckpt, cfg.train);
    if (state.step > cfg.train.steps) {
      throw ConfigError("checkpoint is at step " + std::to_string(state.step) +
                        ", beyond train.steps = " + std::to_string(cfg.train.steps));
    }
  } else {
    state = init_train_state(cfg.train);
  }
  write_text(rundir / "config.ini", cfg.to_text());

  // Records past the checkpoint belong to an interrupted attempt.
  std::string kept = train_csv_header();
  if (resume && fs::exists(csv)) {
    std::istringstream in(read_text(csv));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoll(line.substr(0, line.find(','))) < state.step) kept += line + "\n";
    }
  }
  write_text(csv, kept);
  std::ofstream csv_out(csv, std::ios::app | std::ios::binary);
  if (!csv_out) throw DataError("cannot append to " + csv.string());

  const auto checkpoint = [&](const TrainState& s) {
    save_train_state(s, cfg.train, ckpt);
    save_parameters(s.generator, gen);
  };
  if (!resume) checkpoint(state);

  TrainHooks hooks;
  hooks.on_record = [&](const TrainRecord& rec) {
    csv_out << train_csv_row(rec);
    csv_out.flush();
  };
  hooks.on_checkpoint = checkpoint;
  log << "training " << to_string(cfg.train.loss.mode) << " from step " << state.step << " to "
      << cfg.train.steps << " on " << patches.size() << " patches\n";
  train_loop(patches, cfg.train, state, hooks);
  log << "finished at step " << state.step << "\n";

  if (val_idx.empty()) return;
  const auto rows = validate_generator(data, val_idx, cfg, state.generator);
  std::string text = "id,psnr_low_db,psnr_den_db,ssim_low,ssim_den\n";
  double low = 0.0, den = 0.0;
  for (const auto& r : rows) {
    text += r.id + "," + fmt("%.6f", r.psnr_low) + "," + fmt("%.6f", r.psnr_den) + "," +
            fmt("%.6f", r.ssim_low) + "," + fmt("%.6f", r.ssim_den) + "\n";
    low += r.psnr_low / static_cast<double>(rows.size());
    den += r.psnr_den / static_cast<double>(rows.size());
  }
  write_text(rundir / "validation.csv", text);
  log << "validation psnr: noisy " << fmt("%.3f", low) << " dB, denoised " << fmt("%.3f", den)
      << " dB\n";
}

void cmd_denoise(const RunConfig& cfg_in, const fs::path& ckpt, const fs::path& in,
                 const fs::path& out, std::ostream& log) {
  RunConfig cfg = cfg_in;
  cfg.finalize();
  const ParameterStore params = load_parameters(ckpt, cfg.train.generator.fingerprint());
  if (!fs::is_directory(in)) throw DataError("not a directory: " + in.string());
  std::vector<fs::path> all, low;
  for (const auto& e : fs::directory_iterator(in)) {
    if (!e.is_regular_file() || e.path().extension() != ".ctf") continue;
    all.push_back(e.path());
    const std::string stem = e.path().stem().string();
    if (stem.size() > 4 && stem.ends_with("_low")) low.push_back(e.path());
  }
  auto& files = low.empty() ? all : low;
  if (files.empty()) throw DataError("no .ctf slices in " + in.string());
  std::sort(files.begin(), files.end());
  fs::create_directories(out);
  for (const auto& f : files) {
    Slice s = import_raw(f);
    if (s.unit == SliceUnit::hu) s = hu_scale(s);
    if (s.unit != SliceUnit::unit) throw DataError(f.string() + ": unsupported unit");
    const Slice den = clamp_unit(denoise_tiled(cfg.train.generator, params, s, cfg.tiles));
    const std::string id = id_of(f);
    export_raw(den, out / (id + "_den.ctf"));
    if (cfg.png) export_png(hu_unscale(den), cfg.display, out / (id + "_den.png"));
    log << f.filename().string() << " -> " << id << "_den.ctf\n";
  }
}

MetricReport cmd_evaluate(const fs::path& denoised, const fs::path& reference, const fs::path& out,
                          std::ostream& log) {
  MetricReport report = evaluate_run(denoised, reference);
  if (!report.consistent()) throw NumericalError("psnr/rmse rows are inconsistent");
  write_text(out, report_csv(report));
  log << "mean over " << report.rows.size() << " pairs: psnr_db=" << fmt("%.4f", report.psnr_db.mean)
      << " ssim=" << fmt("%.4f", report.ssim.mean) << " rmse=" << fmt("%.6f", report.rmse.mean)
      << "\n";
  return report;
}

void apply_thread_limit() {
  const char* env = std::getenv("DCSW_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 0) throw ConfigError(std::string("invalid DCSW_THREADS '") + env + "'");
  if (n > 0) openblas_set_num_threads(static_cast<int>(n));
}

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, CommonFlags& flags) {
  app->add_option("--config", flags.config, "configuration file ([data] [model] [loss] [train] [eval])");
  app->add_option("--set", flags.sets, "override one key, e.g. --set train.lr=2e-4");
}

void apply_common(RunConfig& cfg, const CommonFlags& flags, const fs::path& fallback = {}) {
  if (!flags.config.empty()) {
    cfg.load_file(flags.config);
  } else if (!fallback.empty() && fs::exists(fallback)) {
    cfg.load_file(fallback);
  }
  for (const auto& s : flags.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
}

template <typename T>
void override_if(CLI::Option* opt, T& target, const T& value) {
  if (opt->count() > 0) target = value;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Low-dose CT denoising with a dense skip-connection generator and a Wasserstein critic",
               "dcsw"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "synthesize paired NDCT/LDCT slices");
  CommonFlags gen_common;
  std::string gen_out;
  std::size_t slices = 0, size = 0;
  std::uint64_t seed = 0;
  double i0_full = 0.0, i0_low = 0.0, fov = 0.0;
  std::size_t angles = 0;
  gen->add_option("--out", gen_out, "dataset directory")->required();
  auto* o_slices = gen->add_option("--slices", slices, "number of slice pairs");
  auto* o_size = gen->add_option("--size", size, "image size in pixels");
  auto* o_seed = gen->add_option("--seed", seed, "dataset seed");
  auto* o_full = gen->add_option("--i0-full", i0_full, "full-dose photons per ray");
  auto* o_low = gen->add_option("--i0-low", i0_low, "low-dose photons per ray (default i0-full/4)");
  auto* o_fov = gen->add_option("--fov", fov, "field of view in mm");
  auto* o_angles = gen->add_option("--angles", angles, "projection angles (0: image size)");
  add_common(gen, gen_common);

  // train
  auto* tr = app.add_subcommand("train", "train the denoiser");
  CommonFlags tr_common;
  std::string tr_data, tr_out, mode;
  std::int64_t steps = 0, ckpt_every = 0;
  std::size_t n_critic = 0, batch = 0, patches = 0;
  std::uint64_t tr_seed = 0;
  double gp = 0.0, l1w = 0.0, lr = 0.0;
  bool resume = false;
  auto* o_data = tr->add_option("--data", tr_data, "dataset directory");
  auto* o_mode = tr->add_option("--mode", mode, "l1 | wgan | joint");
  auto* o_steps = tr->add_option("--steps", steps, "generator steps");
  tr->add_option("--out", tr_out, "run directory")->required();
  auto* o_ncritic = tr->add_option("--n-critic", n_critic, "critic steps per generator step");
  auto* o_batch = tr->add_option("--batch", batch, "batch size");
  auto* o_patches = tr->add_option("--patches", patches, "training patch pairs");
  auto* o_tseed = tr->add_option("--seed", tr_seed, "training seed");
  auto* o_gp = tr->add_option("--lambda-gp", gp, "gradient penalty weight");
  auto* o_l1 = tr->add_option("--lambda-l1", l1w, "L1 weight");
  auto* o_lr = tr->add_option("--lr", lr, "Adam learning rate");
  auto* o_every = tr->add_option("--checkpoint-every", ckpt_every, "checkpoint cadence in generator steps");
  tr->add_flag("--resume", resume, "continue from RUNDIR/checkpoint.dcsw");
  add_common(tr, tr_common);

  // denoise
  auto* dn = app.add_subcommand("denoise", "denoise slices with a trained generator");
  CommonFlags dn_common;
  std::string dn_ckpt, dn_in, dn_out;
  std::size_t tile = 0, overlap = 0;
  bool png = false;
  dn->add_option("--ckpt", dn_ckpt, "generator checkpoint")->required();
  dn->add_option("--in", dn_in, "directory of .ctf slices")->required();
  dn->add_option("--out", dn_out, "output directory")->required();
  auto* o_tile = dn->add_option("--tile", tile, "tile size");
  auto* o_overlap = dn->add_option("--overlap", overlap, "tile overlap");
  auto* o_png = dn->add_flag("--png", png, "also write PNGs in the display window");
  add_common(dn, dn_common);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "PSNR / SSIM / RMSE report");
  std::string ev_den, ev_ref, ev_out;
  ev->add_option("--denoised", ev_den, "directory of denoised slices")->required();
  ev->add_option("--reference", ev_ref, "directory of reference slices")->required();
  ev->add_option("--out", ev_out, "report CSV")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    apply_thread_limit();
    RunConfig cfg;
    if (gen->parsed()) {
      apply_common(cfg, gen_common);
      override_if(o_slices, cfg.slices, slices);
      override_if(o_size, cfg.size, size);
      override_if(o_seed, cfg.data_seed, seed);
      override_if(o_fov, cfg.fov_mm, fov);
      override_if(o_angles, cfg.n_angles, angles);
      if (o_full->count()) {
        cfg.dose.i0_full = i0_full;
        if (!o_low->count()) cfg.dose.i0_low = i0_full / 4.0;
      }
      override_if(o_low, cfg.dose.i0_low, i0_low);
      cmd_gen_data(cfg, gen_out, out);
    } else if (tr->parsed()) {
      apply_common(cfg, tr_common, resume ? fs::path(tr_out) / "config.ini" : fs::path());
      if (o_data->count()) cfg.data_dir = tr_data;
      if (o_mode->count()) cfg.train.loss.mode = parse_training_mode(mode);
      override_if(o_steps, cfg.train.steps, steps);
      override_if(o_ncritic, cfg.train.n_critic, n_critic);
      override_if(o_batch, cfg.train.batch_size, batch);
      override_if(o_patches, cfg.patches, patches);
      override_if(o_tseed, cfg.train.seed, tr_seed);
      override_if(o_gp, cfg.train.loss.gp_weight, gp);
      override_if(o_l1, cfg.train.loss.l1_weight, l1w);
      override_if(o_lr, cfg.train.adam.lr, lr);
      override_if(o_every, cfg.train.checkpoint_every, ckpt_every);
      cmd_train(cfg, tr_out, resume, out);
    } else if (dn->parsed()) {
      apply_common(cfg, dn_common, fs::path(dn_ckpt).parent_path() / "config.ini");
      override_if(o_tile, cfg.tiles.tile, tile);
      override_if(o_overlap, cfg.tiles.overlap, overlap);
      if (o_png->count()) cfg.png = png;
      cmd_denoise(cfg, dn_ckpt, dn_in, dn_out, out);
    } else if (ev->parsed()) {
      cmd_evaluate(ev_den, ev_ref, ev_out, out);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace dcsw
