#pragma once

// Probe-based evaluation: embeddings from a trained bundle feed a fixed
// classifier trained from scratch, so every method is scored the same way.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "subvae/data.hpp"
#include "subvae/model.hpp"
#include "subvae/train.hpp"

namespace subvae {

struct EmbeddingSet {
  std::string method;
  Index dim = 0;
  std::vector<std::int64_t> ids;
  std::vector<int> labels;
  std::vector<float> values;  // ids.size() × dim, row-major

  Index size() const { return static_cast<Index>(ids.size()); }
};

/// Eval-mode features (see `embed`) for the records at `indices`, in order.
EmbeddingSet export_embeddings(ModelBundle<float>& bundle, const Dataset& dataset,
                               std::span<const std::size_t> indices);

struct ProbeConfig {
  Index epochs = 200;
  double learning_rate = 1e-3;
  Index batch_size = 32;
  std::uint64_t seed = 0;
};

struct Probe {
  Classifier<float> net;
  Architecture arch;

  std::vector<int> predict(const EmbeddingSet& set);
};

/// Same layout as the model's classifier (input → 256 → 64 → 6), trained with
/// Adam on frozen embeddings.
Probe train_probe(const EmbeddingSet& train, const ProbeConfig& cfg, const Architecture& arch = {});

struct MetricsReport {
  double accuracy = 0;
  double precision = 0;  // macro
  double recall = 0;     // macro
  std::array<std::array<Index, kPhenotypes>, kPhenotypes> confusion{};  // [true][predicted]
  Index n = 0;
};

/// Macro averages run over all six classes; a class that is never predicted
/// has precision 0, a class that never occurs has recall 0.
MetricsReport compute_metrics(std::span<const int> predictions, std::span<const int> labels);

struct ExperimentConfig {
  LatentConfig latent;
  Architecture arch;
  TrainConfig train;
  ProbeConfig probe;
  std::uint64_t model_seed = 0;
};

struct MethodResult {
  std::string method;
  Variant variant = Variant::proposed;
  LatentConfig latent;
  Index embedding_size = 0;
  MetricsReport metrics;
  TrainTrace trace;
};

/// "proposed@1/8" for the proposed variant, otherwise the variant name.
std::string method_name(Variant variant, const LatentConfig& latent);

using EpochCallback = std::function<void(const std::string& method, const EpochRecord&)>;

/// Embeds the train and test splits, trains a probe on train and scores test.
/// `shuffle_labels` permutes the probe's training labels (chance-level check).
MetricsReport evaluate_bundle(ModelBundle<float>& bundle, const Dataset& dataset,
                              const ProbeConfig& probe, bool shuffle_labels = false);

/// Trains one bundle with `fit`, then evaluates it. Writes the training
/// artifacts under out_dir when given.
MethodResult run_method(const Dataset& dataset, const ExperimentConfig& cfg, Variant variant,
                        const LatentConfig& latent,
                        const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                        const EpochCallback& on_epoch = {});

/// All three variants with identical seeds and data; rows in the given order.
std::vector<MethodResult> compare_variants(const Dataset& dataset, const ExperimentConfig& cfg,
                                           std::span<const Variant> variants,
                                           const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                                           const EpochCallback& on_epoch = {});

/// One proposed-model run per subspace proportion; rows in the given order.
std::vector<MethodResult> sweep_subspace(const Dataset& dataset, const ExperimentConfig& cfg,
                                         std::span<const Proportion> proportions,
                                         const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                                         const EpochCallback& on_epoch = {});

/// method,embedding_size,accuracy,precision,recall
std::string report_csv(std::span<const MethodResult> rows);
/// proportion,embedding_size,accuracy,precision,recall,rank (rank 1 = best accuracy)
std::string sweep_csv(std::span<const MethodResult> rows);
/// method,true_label,<one count column per predicted class>
std::string confusion_csv(std::span<const MethodResult> rows);

/// For each of the first n records, one binary PGM per channel with the
/// input on the left and sigmoid(reconstruction) on the right. Returns the
/// paths written.
std::vector<std::filesystem::path> dump_reconstructions(ModelBundle<float>& bundle,
                                                        const Dataset& dataset,
                                                        std::span<const std::size_t> indices,
                                                        Index n,
                                                        const std::filesystem::path& dir);

/// 8-bit value used for an intensity in [0,1]: round(255·v), clamped.
unsigned char to_gray(float value);

}  // namespace subvae
