#pragma once

// Differentiable operations. Each op computes its value eagerly and, when any
// input requires a gradient and recording is enabled, appends its backward
// rule to the calling thread's tape.

#include <cstdint>
#include <span>
#include <vector>

#include "subvae/tensor.hpp"

namespace subvae {

enum class Mode { train, eval };

/// Batch-norm running statistics (not trainable, but checkpointed).
template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;

  static RunningStats init(Index channels) {
    return {Tensor<T>::zeros({channels}), Tensor<T>::full({channels}, T(1))};
  }
};

/// While alive, every leaky_relu on this thread folds the sign pattern of its
/// input into `signature()`. Gradient checks compare signatures to detect a
/// finite difference that steps across a kink.
class KinkMonitor {
 public:
  KinkMonitor();
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  std::uint64_t signature() const { return hash_; }
  void reset() { hash_ = kOffset; }
  void fold(std::uint64_t word) {
    hash_ ^= word;
    hash_ *= 1099511628211ull;
  }
  static KinkMonitor* active();

 private:
  static constexpr std::uint64_t kOffset = 1469598103934665603ull;
  KinkMonitor* previous_;
  std::uint64_t hash_ = kOffset;
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kLeakySlope = 0.01;

/// How conv2d treats (H + 2·padding − kH) not divisible by stride: `exact`
/// rejects it, `floor` drops the trailing rows/columns that do not fit a window.
enum class Rounding { exact, floor };

/// x: N×C×H×W, weight: O×C×kH×kW, bias: O or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Index stride,
                 Index padding, Rounding rounding = Rounding::exact);

/// x: N×I×H×W, weight: I×O×kH×kW, bias: O or undefined.
/// Output spatial size (H-1)·stride - 2·padding + kH.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           Index stride, Index padding);

/// Per-channel normalization over every axis except axis 1. Train mode uses
/// batch statistics and updates `stats`; eval mode reads `stats` only.
/// Running variance is updated with the unbiased batch variance.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     RunningStats<T>& stats, Mode mode, double momentum = kBatchNormMomentum,
                     double epsilon = kBatchNormEpsilon);

/// max(x, slope·x); the derivative at exactly 0 is `slope`.
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope = kLeakySlope);

/// x: N×F, weight: F×G, bias: G or undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Batch mean of -log softmax(logits)[label].
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Bernoulli negative log-likelihood of `target` under sigmoid(logits),
/// summed over all elements of a sample and averaged over axis 0.
template <typename T>
Tensor<T> bernoulli_cross_entropy(const Tensor<T>& logits, const Tensor<T>& target);

/// Batch mean of KL(N(mu, exp(logvar)) || N(0, I)).
template <typename T>
Tensor<T> gaussian_kl(const Tensor<T>& mu, const Tensor<T>& logvar);

/// mu + exp(logvar / 2) * noise; `noise` is treated as a constant.
template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& logvar, const Tensor<T>& noise);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Columns [begin, end) of an N×D matrix. An empty range gives N×0.
template <typename T>
Tensor<T> slice_columns(const Tensor<T>& x, Index begin, Index end);

template <typename T>
Tensor<T> concat_columns(const Tensor<T>& left, const Tensor<T>& right);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);

/// Non-differentiable logistic function, used for reconstructions.
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& logits);

}  // namespace subvae
