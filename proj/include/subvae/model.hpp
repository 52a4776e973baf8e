#pragma once

// Semi-supervised VAE with a supervised latent subspace, plus the two
// baselines it is compared against (plain VAE, supervised autoencoder).

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>

#include "subvae/ops.hpp"
#include "subvae/tensor.hpp"

namespace subvae {

enum class Variant { proposed, standard_vae, supervised_ae };

std::string to_string(Variant variant);
Variant parse_variant(std::string_view text);

/// Positive rational in (0, 1], written "1/8" or "1".
struct Proportion {
  std::int64_t num = 1;
  std::int64_t den = 8;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const;
  static Proportion parse(std::string_view text);
  bool operator==(const Proportion&) const = default;
};

struct LatentConfig {
  Index z_dim = 512;
  Proportion proportion{1, 8};

  /// round(z_dim * proportion), half rounded up.
  Index sub_dim() const;
  Index rest_dim() const { return z_dim - sub_dim(); }
  void validate() const;
};

/// The fixed reference architecture. Recorded in checkpoints and resolved
/// configs; a mismatching echo is rejected on load.
struct Architecture {
  Index channels = 9;
  Index image_size = 48;
  std::array<Index, 3> encoder_channels{32, 64, 128};
  Index encoder_kernel = 3;
  Index decoder_kernel = 4;
  Index stride = 2;
  Index padding = 1;
  std::array<Index, 2> classifier_hidden{256, 64};
  Index classes = 6;
  double leaky_slope = kLeakySlope;
  double bn_momentum = kBatchNormMomentum;
  double bn_epsilon = kBatchNormEpsilon;

  Index bottleneck_size() const { return image_size / 8; }
  Index feature_size() const {
    return encoder_channels[2] * bottleneck_size() * bottleneck_size();
  }
  bool operator==(const Architecture&) const = default;
};

template <typename T>
struct LinearLayer {
  Tensor<T> weight;  // in × out
  Tensor<T> bias;    // out, or undefined
};

template <typename T>
struct BatchNormLayer {
  Tensor<T> gamma;
  Tensor<T> beta;
  RunningStats<T> stats;
};

/// linear (no bias) -> batch_norm -> leaky_relu, twice, then a linear output
/// layer. Shared by the model's classifier and the evaluation probe.
template <typename T>
struct Classifier {
  std::array<LinearLayer<T>, 2> hidden;
  std::array<BatchNormLayer<T>, 2> norm;
  LinearLayer<T> output;
  Index input_dim = 0;

  /// Zero weights; call initialize() for Kaiming-uniform values.
  static Classifier create(Index input_dim, const Architecture& arch);
  void initialize(std::uint64_t seed, const std::string& prefix, const Architecture& arch);
  Tensor<T> forward(const Tensor<T>& x, Mode mode, const Architecture& arch);

  void visit_parameters(const std::string& prefix,
                        const std::function<void(const std::string&, Tensor<T>&)>& fn);
  void visit_buffers(const std::string& prefix,
                     const std::function<void(const std::string&, Tensor<T>&)>& fn);
};

template <typename T>
struct EncoderOutput {
  Tensor<T> mu;
  Tensor<T> logvar;  // undefined for the supervised autoencoder
};

struct LossBreakdown {
  double recon = 0;
  double kl = 0;
  double classification = 0;
  double total = 0;
};

template <typename T>
struct LossTerms {
  Tensor<T> recon;
  Tensor<T> kl;              // undefined when the variant has no KL term
  Tensor<T> classification;  // undefined when the variant has no classifier
  Tensor<T> total;
  Tensor<T> recon_logits;
  EncoderOutput<T> encoded;

  LossBreakdown values() const;
};

template <typename T>
class ModelBundle {
 public:
  struct ConvBlock {
    Tensor<T> weight;
    BatchNormLayer<T> norm;
  };
  struct Encoder {
    std::array<ConvBlock, 3> blocks;
    LinearLayer<T> mu;
    LinearLayer<T> logvar;
  };
  struct Decoder {
    LinearLayer<T> fc;
    std::array<ConvBlock, 2> blocks;
    Tensor<T> out_weight;
    Tensor<T> out_bias;
  };

  ModelBundle() = default;

  /// Allocates and initializes every parameter. Weights are Kaiming-uniform
  /// with a per-parameter stream seeded from (seed, parameter name), so the
  /// shared encoder/decoder tensors of different variants start identical.
  static ModelBundle create(Variant variant, LatentConfig latent, double alpha,
                            std::uint64_t seed, Architecture arch = {});

  Variant variant() const { return variant_; }
  const LatentConfig& latent() const { return latent_; }
  double alpha() const { return alpha_; }
  void set_alpha(double alpha) { alpha_ = alpha; }
  std::uint64_t seed() const { return seed_; }
  const Architecture& arch() const { return arch_; }
  bool has_classifier() const { return variant_ != Variant::standard_vae; }

  Encoder& encoder() { return encoder_; }
  Decoder& decoder() { return decoder_; }
  Classifier<T>& classifier() { return classifier_; }

  /// Ordered (name, tensor) views; handles alias the bundle's storage.
  std::vector<Parameter<T>> parameters();
  std::vector<Parameter<T>> buffers();

  /// Dimension of the exported embedding: sub_dim for the proposed model,
  /// z_dim otherwise.
  Index embedding_dim() const;

  ModelBundle clone() const;
  template <typename U>
  ModelBundle<U> cast() const;

  void zero_grad();
  /// Copies values (parameters and buffers) from another bundle with the same layout.
  void copy_from(const ModelBundle& other);

 private:
  void visit(const std::function<void(const std::string&, Tensor<T>&)>& params,
             const std::function<void(const std::string&, Tensor<T>&)>& buffers);
  static ModelBundle allocate(Variant variant, LatentConfig latent, double alpha,
                              std::uint64_t seed, Architecture arch);

  Variant variant_ = Variant::proposed;
  LatentConfig latent_;
  double alpha_ = 1.0;
  std::uint64_t seed_ = 0;
  Architecture arch_;
  Encoder encoder_;
  Decoder decoder_;
  Classifier<T> classifier_;

  template <typename U>
  friend class ModelBundle;
};

template <typename T>
EncoderOutput<T> encode(ModelBundle<T>& bundle, const Tensor<T>& x, Mode mode);

/// Returns reconstruction logits N×C×H×W from the full latent code.
template <typename T>
Tensor<T> decode(ModelBundle<T>& bundle, const Tensor<T>& z, Mode mode);

template <typename T>
Tensor<T> classify(ModelBundle<T>& bundle, const Tensor<T>& mu_sub, Mode mode);

/// (z_rest, z_sub): the supervised subspace is the last sub_dim coordinates.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_latent(const Tensor<T>& z, const LatentConfig& cfg);

template <typename T>
Tensor<T> kl_divergence(const EncoderOutput<T>& out);

/// -(reconstruction cross entropy + KL); never positive.
template <typename T>
Tensor<T> elbo(const Tensor<T>& x, const Tensor<T>& recon_logits, const EncoderOutput<T>& out);

/// Standard-normal noise for the reparameterization, drawn in double precision
/// so float and double evaluations see identical samples.
template <typename T>
Tensor<T> sample_noise(const Shape& shape, std::mt19937_64& rng);

/// Variant-specific objective:
///   proposed       recon + kl + alpha * CE(classify(mu_sub))
///   standard_vae   recon + kl
///   supervised_ae  recon + alpha * CE(classify(mu))
/// `noise` is ignored by the supervised autoencoder (deterministic code).
template <typename T>
LossTerms<T> total_loss(ModelBundle<T>& bundle, const Tensor<T>& x, std::span<const int> labels,
                        Mode mode, const Tensor<T>& noise);

template <typename T>
LossTerms<T> total_loss(ModelBundle<T>& bundle, const Tensor<T>& x, std::span<const int> labels,
                        Mode mode, std::mt19937_64& rng);

/// Eval-mode, no-grad features used by the probe protocol: mu_sub for the
/// proposed model, the full mean (or code) for the baselines.
template <typename T>
Tensor<T> embed(ModelBundle<T>& bundle, const Tensor<T>& x);

/// Sets the decoder output bias to the logit of each channel's mean
/// intensity, so an untrained decoder reproduces the dataset mean image.
template <typename T>
void initialize_output_bias(ModelBundle<T>& bundle, std::span<const float> images, Index count);

/// Checkpoint directory: manifest.json plus one SVT1 file per parameter and buffer.
void save_checkpoint(const ModelBundle<float>& bundle, const std::filesystem::path& dir,
                     std::uint64_t epoch);
ModelBundle<float> load_checkpoint(const std::filesystem::path& dir);

std::uint64_t name_hash(std::string_view name);

}  // namespace subvae
