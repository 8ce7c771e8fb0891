#include "dcsw/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "dcsw/errors.hpp"

namespace dcsw {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
  return value;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  if (!text.empty() && text.front() == '-') {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
  return parse_number<std::size_t>(key, text);
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("invalid boolean '" + text + "' for " + key);
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(name, member)                                                        \
  Field {                                                                               \
    name, [](RunConfig& c, const std::string& k, const std::string& v) {                \
      c.member = parse_size(k, v);                                                      \
    },                                                                                  \
        [](const RunConfig& c) { return std::to_string(c.member); }                     \
  }
#define REAL_FIELD(name, member)                                                        \
  Field {                                                                               \
    name, [](RunConfig& c, const std::string& k, const std::string& v) {                \
      c.member = parse_number<double>(k, v);                                            \
    },                                                                                  \
        [](const RunConfig& c) { return fmt(c.member); }                                \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"data.dir", [](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; },
       [](const RunConfig& c) { return c.data_dir.string(); }},
      SIZE_FIELD("data.slices", slices),
      SIZE_FIELD("data.size", size),
      {"data.seed",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.data_seed = parse_number<std::uint64_t>(k, v);
       },
       [](const RunConfig& c) { return std::to_string(c.data_seed); }},
      REAL_FIELD("data.fov_mm", fov_mm),
      SIZE_FIELD("data.n_angles", n_angles),
      REAL_FIELD("data.i0_full", dose.i0_full),
      REAL_FIELD("data.i0_low", dose.i0_low),
      SIZE_FIELD("data.patch_size", patch_size),
      SIZE_FIELD("data.patches", patches),
      REAL_FIELD("data.val_fraction", val_fraction),
      {"data.lesion_bias",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.lesion_bias = parse_bool(k, v);
       },
       [](const RunConfig& c) { return std::string(c.lesion_bias ? "true" : "false"); }},

      {"model.feature_filters",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.generator.feature_filters = parse_list(k, v);
       },
       [](const RunConfig& c) { return fmt_list(c.train.generator.feature_filters); }},
      SIZE_FIELD("model.feature_kernel", train.generator.feature_kernel),
      SIZE_FIELD("model.a1_filters", train.generator.a1_filters),
      SIZE_FIELD("model.a1_kernel", train.generator.a1_kernel),
      SIZE_FIELD("model.b1_filters", train.generator.b1_filters),
      SIZE_FIELD("model.b1_kernel", train.generator.b1_kernel),
      SIZE_FIELD("model.b2_filters", train.generator.b2_filters),
      SIZE_FIELD("model.b2_kernel", train.generator.b2_kernel),
      SIZE_FIELD("model.nin_kernel", train.generator.nin_kernel),
      {"model.activation",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.train.generator.activation = parse_activation(v);
       },
       [](const RunConfig& c) { return to_string(c.train.generator.activation); }},
      REAL_FIELD("model.prelu_init", train.generator.prelu_init),
      REAL_FIELD("model.leaky_slope", train.generator.leaky_slope),
      {"model.critic_filters",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.critic.filters = parse_list(k, v);
       },
       [](const RunConfig& c) { return fmt_list(c.train.critic.filters); }},
      {"model.critic_strides",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.critic.strides = parse_list(k, v);
       },
       [](const RunConfig& c) { return fmt_list(c.train.critic.strides); }},
      SIZE_FIELD("model.critic_kernel", train.critic.kernel),
      SIZE_FIELD("model.critic_fc_hidden", train.critic.fc_hidden),
      REAL_FIELD("model.critic_slope", train.critic.leaky_slope),

      {"loss.mode",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.train.loss.mode = parse_training_mode(v);
       },
       [](const RunConfig& c) { return to_string(c.train.loss.mode); }},
      REAL_FIELD("loss.gp_weight", train.loss.gp_weight),
      REAL_FIELD("loss.l1_weight", train.loss.l1_weight),

      {"train.steps",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.steps = static_cast<std::int64_t>(parse_size(k, v));
       },
       [](const RunConfig& c) { return std::to_string(c.train.steps); }},
      SIZE_FIELD("train.n_critic", train.n_critic),
      SIZE_FIELD("train.batch_size", train.batch_size),
      {"train.seed",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.seed = parse_number<std::uint64_t>(k, v);
       },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      REAL_FIELD("train.lr", train.adam.lr),
      REAL_FIELD("train.beta1", train.adam.beta1),
      REAL_FIELD("train.beta2", train.adam.beta2),
      REAL_FIELD("train.epsilon", train.adam.epsilon),
      {"train.checkpoint_every",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.checkpoint_every = static_cast<std::int64_t>(parse_size(k, v));
       },
       [](const RunConfig& c) { return std::to_string(c.train.checkpoint_every); }},

      SIZE_FIELD("eval.tile", tiles.tile),
      SIZE_FIELD("eval.overlap", tiles.overlap),
      {"eval.png",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.png = parse_bool(k, v); },
       [](const RunConfig& c) { return std::string(c.png ? "true" : "false"); }},
      REAL_FIELD("eval.window_lo", display.lo),
      REAL_FIELD("eval.window_hi", display.hi),
  };
  return table;
}

#undef SIZE_FIELD
#undef REAL_FIELD

}  // namespace

void RunConfig::set(const std::string& dotted_key, const std::string& value) {
  for (const auto& f : fields()) {
    if (dotted_key == f.key) {
      f.set(*this, dotted_key, trim(value));
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + dotted_key + "'");
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "data" && section != "model" && section != "loss" && section != "train" &&
          section != "eval") {
        throw ConfigError(where + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    if (section.empty()) throw ConfigError(where + ": key outside of a section");
    try {
      set(section + "." + trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read configuration file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path.string());
}

std::string RunConfig::to_text() const {
  std::string out, section;
  for (const auto& f : fields()) {
    const std::string key = f.key;
    const auto dot = key.find('.');
    if (key.substr(0, dot) != section) {
      section = key.substr(0, dot);
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += key.substr(dot + 1) + " = " + f.get(*this) + "\n";
  }
  return out;
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

void RunConfig::finalize() {
  if (size < 64) throw ConfigError("data.size must be >= 64");
  if (!(fov_mm > 0.0)) throw ConfigError("data.fov_mm must be positive");
  if (!(dose.i0_full > 0.0) || !(dose.i0_low > 0.0)) {
    throw ConfigError("photon counts must be positive");
  }
  if (patch_size < kMinGeneratorExtent) throw ConfigError("data.patch_size too small");
  if (patches == 0) throw ConfigError("data.patches must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ConfigError("data.val_fraction must lie in [0, 1)");
  }
  display.validate();
  tiles.validate();
  train.critic.input_size = patch_size;
  train.validate();
}

SynthesisOptions RunConfig::synthesis() const {
  SynthesisOptions o;
  o.size = size;
  o.fov_mm = fov_mm;
  o.n_angles = n_angles;
  o.dose = dose;
  return o;
}

}  // namespace dcsw
