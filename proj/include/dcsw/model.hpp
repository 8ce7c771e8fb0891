#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dcsw/rng.hpp"
#include "dcsw/tensor.hpp"

namespace dcsw {

using Fingerprint = std::array<std::uint8_t, 32>;

/// SHA-256 of arbitrary text.
Fingerprint sha256(const std::string& text);
std::string to_hex(const Fingerprint& fp);

enum class ActivationKind { prelu, leaky_relu };

std::string to_string(ActivationKind kind);
ActivationKind parse_activation(const std::string& text);

/// One convolution of a network description.
struct LayerSpec {
  std::string name;
  std::size_t in_channels = 0;
  std::size_t filters = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool activated = true;
};

/// Denoising generator: a cascade of 3x3 feature-extraction convolutions whose
/// outputs are all concatenated, two reconstruction channels (A: one conv;
/// B: two convs in sequence), a 1x1 network-in-network conv to one channel,
/// and a residual connection back to the input.
struct GeneratorConfig {
  std::vector<std::size_t> feature_filters{32, 26, 22, 18, 14, 11, 8};
  std::size_t feature_kernel = 3;
  std::size_t a1_filters = 24;
  std::size_t a1_kernel = 1;
  std::size_t b1_filters = 8;
  std::size_t b1_kernel = 1;
  std::size_t b2_filters = 8;
  std::size_t b2_kernel = 3;
  std::size_t nin_kernel = 1;
  ActivationKind activation = ActivationKind::prelu;
  double prelu_init = 0.25;
  double leaky_slope = 0.2;

  void validate() const;
  /// Width of the dense skip concatenation feeding reconstruction.
  std::size_t dense_width() const;
  /// Width of the channel A/B concatenation feeding the NiN conv.
  std::size_t reconstruction_width() const { return a1_filters + b2_filters; }
  /// Context radius in pixels: the output at a pixel depends only on inputs
  /// within this Chebyshev distance.
  std::size_t receptive_radius() const;
  std::vector<LayerSpec> layers() const;
  /// Canonical text used for the architecture fingerprint.
  std::string canonical() const;
  Fingerprint fingerprint() const { return sha256(canonical()); }
};

/// Critic: strided 3x3 conv chain with leaky activations, then two fully
/// connected layers to one unbounded score per sample. No normalization
/// layers, so per-sample input gradients are well defined.
struct CriticConfig {
  std::size_t input_size = 80;
  std::vector<std::size_t> filters{64, 64, 128, 128, 256, 256};
  std::vector<std::size_t> strides{1, 2, 1, 2, 1, 2};
  std::size_t kernel = 3;
  std::size_t fc_hidden = 1024;
  double leaky_slope = 0.2;

  void validate() const;
  /// Spatial extent after the conv chain.
  std::size_t final_extent() const;
  std::vector<LayerSpec> layers() const;
  std::string canonical() const;
  Fingerprint fingerprint() const { return sha256(canonical()); }
};

/// Ordered, uniquely named parameter tensors plus the fingerprint of the
/// configuration that produced them.
class ParameterStore {
 public:
  ParameterStore() = default;
  explicit ParameterStore(Fingerprint fingerprint) : fingerprint_(fingerprint) {}

  void add(const std::string& name, Tensor tensor);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::size_t parameter_count() const;

  const Fingerprint& fingerprint() const { return fingerprint_; }

  /// Independent copy with fresh leaf tensors.
  ParameterStore clone() const;
  /// True when names, shapes and value bytes all match.
  bool bitwise_equal(const ParameterStore& other) const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  Fingerprint fingerprint_{};
};

/// Σ(k²·Cin·Cout + Cout) over the convolution layers.
std::size_t conv_parameter_count(const std::vector<LayerSpec>& layers);

using ParameterLayout = std::vector<std::pair<std::string, Shape>>;

/// Names and shapes of the parameters built for a configuration, in order.
ParameterLayout generator_layout(const GeneratorConfig& cfg);
ParameterLayout critic_layout(const CriticConfig& cfg);

ParameterStore build_generator(const GeneratorConfig& cfg, RngStream rng);
ParameterStore build_critic(const CriticConfig& cfg, RngStream rng);

inline constexpr std::size_t kMinGeneratorExtent = 8;

/// x[B,1,H,W] -> x + residual(x), same shape.
Tensor generator_forward(const GeneratorConfig& cfg, const ParameterStore& params,
                         const Tensor& x);

/// y[B,1,S,S] -> scores[B].
Tensor critic_forward(const CriticConfig& cfg, const ParameterStore& params, const Tensor& y);

}  // namespace dcsw
