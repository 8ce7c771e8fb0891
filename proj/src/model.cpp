#include "dcsw/model.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "dcsw/errors.hpp"

namespace dcsw {

Fingerprint sha256(const std::string& text) {
  Fingerprint out{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != out.size()) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  return out;
}

std::string to_hex(const Fingerprint& fp) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (auto byte : fp) {
    s += digits[byte >> 4];
    s += digits[byte & 15];
  }
  return s;
}

std::string to_string(ActivationKind kind) {
  return kind == ActivationKind::prelu ? "prelu" : "leaky_relu";
}

ActivationKind parse_activation(const std::string& text) {
  if (text == "prelu") return ActivationKind::prelu;
  if (text == "leaky_relu" || text == "leaky") return ActivationKind::leaky_relu;
  throw ConfigError("unknown activation '" + text + "' (expected prelu or leaky_relu)");
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

void require_odd_kernel(std::size_t k, const char* what) {
  if (k < 1 || k % 2 == 0) {
    throw ConfigError(std::string("generator: ") + what + " kernel must be odd, got " +
                      std::to_string(k));
  }
}

Tensor init_weights(const LayerSpec& layer, RngStream& rng) {
  const std::size_t fan_in = layer.kernel * layer.kernel * layer.in_channels;
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  Shape shape{layer.filters, layer.in_channels, layer.kernel, layer.kernel};
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(values), true);
}

void add_conv(ParameterStore& store, const LayerSpec& layer, const RngStream& rng) {
  RngStream stream = rng.substream(layer.name);
  store.add(layer.name + ".w", init_weights(layer, stream));
  store.add(layer.name + ".b", Tensor::zeros({layer.filters}, true));
}

}  // namespace

// ---------------------------------------------------------------------------
// GeneratorConfig

void GeneratorConfig::validate() const {
  if (feature_filters.empty()) throw ConfigError("generator: no feature-extraction layers");
  for (auto n : feature_filters) {
    if (n < 1) throw ConfigError("generator: feature filter count must be >= 1");
  }
  if (a1_filters < 1 || b1_filters < 1 || b2_filters < 1) {
    throw ConfigError("generator: reconstruction filter counts must be >= 1");
  }
  require_odd_kernel(feature_kernel, "feature-extraction");
  require_odd_kernel(a1_kernel, "A1");
  require_odd_kernel(b1_kernel, "B1");
  require_odd_kernel(b2_kernel, "B2");
  require_odd_kernel(nin_kernel, "NiN");
  if (!std::isfinite(prelu_init) || !std::isfinite(leaky_slope)) {
    throw ConfigError("generator: activation slopes must be finite");
  }
}

std::size_t GeneratorConfig::dense_width() const {
  std::size_t w = 0;
  for (auto n : feature_filters) w += n;
  return w;
}

std::size_t GeneratorConfig::receptive_radius() const {
  const std::size_t features = feature_filters.size() * (feature_kernel / 2);
  const std::size_t channel_a = a1_kernel / 2;
  const std::size_t channel_b = b1_kernel / 2 + b2_kernel / 2;
  return features + std::max(channel_a, channel_b) + nin_kernel / 2;
}

std::vector<LayerSpec> GeneratorConfig::layers() const {
  std::vector<LayerSpec> out;
  std::size_t in = 1;
  for (std::size_t i = 0; i < feature_filters.size(); ++i) {
    out.push_back({"fe" + std::to_string(i + 1), in, feature_filters[i], feature_kernel, 1, true});
    in = feature_filters[i];
  }
  const std::size_t dense = dense_width();
  out.push_back({"a1", dense, a1_filters, a1_kernel, 1, true});
  out.push_back({"b1", dense, b1_filters, b1_kernel, 1, true});
  out.push_back({"b2", b1_filters, b2_filters, b2_kernel, 1, true});
  out.push_back({"nin", reconstruction_width(), 1, nin_kernel, 1, false});
  return out;
}

std::string GeneratorConfig::canonical() const {
  std::ostringstream os;
  os << "generator/v1;fe=" << join(feature_filters) << ";fek=" << feature_kernel
     << ";a1=" << a1_filters << "x" << a1_kernel << ";b1=" << b1_filters << "x" << b1_kernel
     << ";b2=" << b2_filters << "x" << b2_kernel << ";nin=" << nin_kernel
     << ";act=" << to_string(activation);
  if (activation == ActivationKind::leaky_relu) os << ";slope=" << leaky_slope;
  return os.str();
}

// ---------------------------------------------------------------------------
// CriticConfig

void CriticConfig::validate() const {
  if (filters.empty()) throw ConfigError("critic: no convolution layers");
  if (filters.size() != strides.size()) {
    throw ConfigError("critic: " + std::to_string(filters.size()) + " filter counts but " +
                      std::to_string(strides.size()) + " strides");
  }
  for (auto n : filters) {
    if (n < 1) throw ConfigError("critic: filter count must be >= 1");
  }
  for (auto s : strides) {
    if (s < 1) throw ConfigError("critic: stride must be >= 1");
  }
  if (kernel < 1) throw ConfigError("critic: kernel must be >= 1");
  if (fc_hidden < 1) throw ConfigError("critic: fully connected width must be >= 1");
  if (input_size < 1) throw ConfigError("critic: input size must be >= 1");
  if (!std::isfinite(leaky_slope)) throw ConfigError("critic: non-finite leaky slope");
}

std::size_t CriticConfig::final_extent() const {
  std::size_t s = input_size;
  for (auto st : strides) s = (s + st - 1) / st;
  return s;
}

std::vector<LayerSpec> CriticConfig::layers() const {
  std::vector<LayerSpec> out;
  std::size_t in = 1;
  for (std::size_t i = 0; i < filters.size(); ++i) {
    out.push_back({"c" + std::to_string(i + 1), in, filters[i], kernel, strides[i], true});
    in = filters[i];
  }
  // Fully connected layers are convolutions covering the whole feature map.
  out.push_back({"fc1", in, fc_hidden, final_extent(), 1, true});
  out.push_back({"fc2", fc_hidden, 1, 1, 1, false});
  return out;
}

std::string CriticConfig::canonical() const {
  std::ostringstream os;
  os << "critic/v1;in=" << input_size << ";n=" << join(filters) << ";s=" << join(strides)
     << ";k=" << kernel << ";fc=" << fc_hidden << ";slope=" << leaky_slope;
  return os.str();
}

// ---------------------------------------------------------------------------
// ParameterStore

void ParameterStore::add(const std::string& name, Tensor tensor) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  entries_.emplace_back(name, std::move(tensor));
}

const Tensor& ParameterStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ConfigError("no parameter named '" + name + "'");
}

Tensor& ParameterStore::get(const std::string& name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ConfigError("no parameter named '" + name + "'");
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return true;
  }
  return false;
}

std::vector<Tensor> ParameterStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

ParameterStore ParameterStore::clone() const {
  ParameterStore copy(fingerprint_);
  for (const auto& [name, t] : entries_) copy.add(name, t.clone(t.requires_grad()));
  return copy;
}

bool ParameterStore::bitwise_equal(const ParameterStore& other) const {
  if (fingerprint_ != other.fingerprint_ || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& [na, ta] = entries_[i];
    const auto& [nb, tb] = other.entries_[i];
    if (na != nb || ta.shape() != tb.shape()) return false;
    if (std::memcmp(ta.values().data(), tb.values().data(), ta.numel() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

std::size_t conv_parameter_count(const std::vector<LayerSpec>& layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.kernel * l.kernel * l.in_channels * l.filters + l.filters;
  return n;
}

// ---------------------------------------------------------------------------
// Construction

ParameterLayout generator_layout(const GeneratorConfig& cfg) {
  cfg.validate();
  ParameterLayout out;
  for (const auto& l : cfg.layers()) {
    out.emplace_back(l.name + ".w", Shape{l.filters, l.in_channels, l.kernel, l.kernel});
    out.emplace_back(l.name + ".b", Shape{l.filters});
    if (l.activated && cfg.activation == ActivationKind::prelu) {
      out.emplace_back(l.name + ".a", Shape{l.filters});
    }
  }
  return out;
}

ParameterLayout critic_layout(const CriticConfig& cfg) {
  cfg.validate();
  ParameterLayout out;
  for (const auto& l : cfg.layers()) {
    out.emplace_back(l.name + ".w", Shape{l.filters, l.in_channels, l.kernel, l.kernel});
    out.emplace_back(l.name + ".b", Shape{l.filters});
  }
  return out;
}

ParameterStore build_generator(const GeneratorConfig& cfg, RngStream rng) {
  cfg.validate();
  ParameterStore store(cfg.fingerprint());
  for (const auto& layer : cfg.layers()) {
    add_conv(store, layer, rng);
    if (layer.activated && cfg.activation == ActivationKind::prelu) {
      store.add(layer.name + ".a", Tensor::full({layer.filters}, cfg.prelu_init, true));
    }
  }
  return store;
}

ParameterStore build_critic(const CriticConfig& cfg, RngStream rng) {
  cfg.validate();
  ParameterStore store(cfg.fingerprint());
  for (const auto& layer : cfg.layers()) add_conv(store, layer, rng);
  return store;
}

// ---------------------------------------------------------------------------
// Forward passes

namespace {

Tensor activate(const GeneratorConfig& cfg, const ParameterStore& p, const std::string& layer,
                const Tensor& x) {
  if (cfg.activation == ActivationKind::prelu) return prelu(x, p.get(layer + ".a"));
  return leaky_relu(x, cfg.leaky_slope);
}

Tensor conv_layer(const ParameterStore& p, const std::string& layer, const Tensor& x,
                  std::size_t stride, Padding padding) {
  return conv2d(x, p.get(layer + ".w"), p.get(layer + ".b"), stride, padding);
}

}  // namespace

Tensor generator_forward(const GeneratorConfig& cfg, const ParameterStore& params,
                         const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 1) {
    throw UsageError("generator: input must be [B,1,H,W], got " + shape_str(x.shape()));
  }
  if (x.dim(2) < kMinGeneratorExtent || x.dim(3) < kMinGeneratorExtent) {
    throw UsageError("generator: input " + std::to_string(x.dim(2)) + "x" +
                     std::to_string(x.dim(3)) + " below minimum " +
                     std::to_string(kMinGeneratorExtent) + "x" +
                     std::to_string(kMinGeneratorExtent));
  }
  if (params.fingerprint() != cfg.fingerprint()) {
    throw ConfigError("generator: parameters do not match configuration fingerprint");
  }

  std::vector<Tensor> features;
  Tensor h = x;
  for (std::size_t i = 0; i < cfg.feature_filters.size(); ++i) {
    const std::string name = "fe" + std::to_string(i + 1);
    h = activate(cfg, params, name, conv_layer(params, name, h, 1, Padding::same));
    features.push_back(h);
  }
  const Tensor dense = concat_channels(features);

  const Tensor a = activate(cfg, params, "a1", conv_layer(params, "a1", dense, 1, Padding::same));
  Tensor b = activate(cfg, params, "b1", conv_layer(params, "b1", dense, 1, Padding::same));
  b = activate(cfg, params, "b2", conv_layer(params, "b2", b, 1, Padding::same));

  const Tensor residual = conv_layer(params, "nin", concat_channels({a, b}), 1, Padding::same);
  return add(x, residual);
}

Tensor critic_forward(const CriticConfig& cfg, const ParameterStore& params, const Tensor& y) {
  if (y.rank() != 4 || y.dim(1) != 1) {
    throw UsageError("critic: input must be [B,1,H,W], got " + shape_str(y.shape()));
  }
  if (y.dim(2) != cfg.input_size || y.dim(3) != cfg.input_size) {
    throw UsageError("critic: input " + std::to_string(y.dim(2)) + "x" +
                     std::to_string(y.dim(3)) + " incompatible with configured size " +
                     std::to_string(cfg.input_size));
  }
  if (params.fingerprint() != cfg.fingerprint()) {
    throw ConfigError("critic: parameters do not match configuration fingerprint");
  }
  Tensor h = y;
  for (std::size_t i = 0; i < cfg.filters.size(); ++i) {
    const std::string name = "c" + std::to_string(i + 1);
    h = leaky_relu(conv_layer(params, name, h, cfg.strides[i], Padding::same), cfg.leaky_slope);
  }
  h = leaky_relu(conv_layer(params, "fc1", h, 1, Padding::valid), cfg.leaky_slope);
  h = conv_layer(params, "fc2", h, 1, Padding::valid);
  return reshape(h, {y.dim(0)});
}

}  // namespace dcsw
