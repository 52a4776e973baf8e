#pragma once

// Synthetic multiplexed-immunofluorescence cohort and the preprocessing
// pipeline that turns cell detections into a balanced, normalized patch set.

#include <array>
#include <bitset>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "subvae/tensor.hpp"

namespace subvae {

inline constexpr Index kChannels = 9;
inline constexpr Index kPatchSize = 48;
inline constexpr Index kPatchPixels = kPatchSize * kPatchSize;
inline constexpr Index kPatchValues = kChannels * kPatchPixels;
inline constexpr int kPhenotypes = 6;

enum Channel : int { PD1, CD140b, CD146, Thy1, PanCK, CD8, aSMA, CD31, DAPI };

std::string_view channel_name(int channel);

enum class Phenotype : int { Tumour, iCAF, myCAF, TCell, dPVL, ExhaustedTCell };

std::string_view to_string(Phenotype phenotype);
Phenotype parse_phenotype(std::string_view text);

/// Channels whose positivity defines the phenotype.
std::span<const Channel> signature(Phenotype phenotype);

struct DetectionRecord {
  std::int64_t cell_id = 0;
  std::int64_t slide_id = 0;
  std::array<int, 2> center{};  // (x, y) in the source image
  std::array<float, kChannels> max{};
  std::array<bool, kChannels> positive{};
  float panck_cytoplasm_mean = 0;

  bool any_positive() const;
  bool operator==(const DetectionRecord&) const = default;
};

struct SlideStats {
  std::int64_t slide_id = 0;
  std::array<float, kChannels> max{};
};

struct PatchRecord {
  std::vector<float> image;  // kChannels × 48 × 48
  Phenotype label = Phenotype::Tumour;
  std::int64_t slide_id = 0;
  std::int64_t cell_id = 0;
};

enum class Split : int { train, val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct SplitManifest {
  std::vector<std::int64_t> train;
  std::vector<std::int64_t> val;
  std::vector<std::int64_t> test;
  std::uint64_t seed = 0;
  std::array<std::array<Index, kPhenotypes>, 3> counts{};  // [split][class]

  const std::vector<std::int64_t>& ids(Split split) const;
  Index size() const { return static_cast<Index>(train.size() + val.size() + test.size()); }
};

// Preprocessing thresholds, in raw intensity units.
inline constexpr float kDominantLowerThreshold = 0.5f;  // PanCK, CD140b
inline constexpr float kLowerThreshold = 0.3f;          // every other stain
inline constexpr float kMinCellMax = 0.5f;
inline constexpr float kMinPanckCytoplasmMean = 0.5f;
inline constexpr float kMinSlideFraction = 0.01f;

float lower_threshold(int channel);

/// Min-max normalization against the slide maxima with per-stain lower
/// thresholds, clamped to [0, 1]. A channel whose slide maximum does not
/// exceed its threshold is emitted as zeros and flagged in `degenerate`.
std::vector<float> normalize_patch(std::span<const float> raw, const SlideStats& stats,
                                   std::bitset<kChannels>* degenerate = nullptr);

/// Applies, in order: drop cells without any positivity; clear positivity
/// where the cell maximum is < 0.5; clear PanCK where its cytoplasm mean is
/// < 0.5; clear PanCK/CD140b where the cell maximum is < 1% of the slide
/// maximum; drop cells left without positivity.
std::vector<DetectionRecord> clean_labels(std::span<const DetectionRecord> detections,
                                          std::span<const SlideStats> slides);

/// dPVL (CD140b and CD146), then ExhaustedTCell (PD1), TCell (CD8),
/// myCAF (αSMA), iCAF (CD140b), Tumour (PanCK). Anything else has no label.
std::optional<Phenotype> assign_phenotype(const DetectionRecord& detection);

/// Indices of exactly `per_class` records of every class, sampled without
/// replacement and returned in ascending order.
std::vector<std::size_t> balance_indices(std::span<const Phenotype> labels, Index per_class,
                                         std::uint64_t seed);
std::vector<PatchRecord> balance_classes(std::span<const PatchRecord> records, Index per_class,
                                         std::uint64_t seed);

/// Per class: 20% test, then 15% of the remainder validation, rest train.
/// Ids within each split are sorted.
SplitManifest stratified_split(std::span<const std::int64_t> ids,
                               std::span<const Phenotype> labels, std::uint64_t seed);

/// 48×48 window of a kChannels×height×width image centred on (x, y); pixels
/// outside the image are zero.
std::vector<float> extract_patch(std::span<const float> image, Index height, Index width, int x,
                                 int y);

struct GeneratorConfig {
  Index slides = 8;
  Index cells_per_class = 625;
  double oversample = 1.2;
  double excluded_fraction = 0.05;
  double noise = 0.03;
  double difficulty = 0.5;
  double violation_rate = 0.05;
  double min_slide_max = 0.8;
  double max_slide_max = 4.0;

  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

/// Which cleaning rule a generated detection deliberately breaks.
enum class Violation : int { none, no_positivity, weak_signal, panck_cytoplasm, blank_channel };

struct CellSpec {
  std::int64_t cell_id = 0;
  std::int64_t slide_id = 0;
  std::optional<Phenotype> phenotype;  // empty for CD31+ / Thy1+ cells
  Channel excluded_marker = CD31;
  Violation violation = Violation::none;
};

/// Cells are rendered from a per-cell stream seeded by (seed, cell_id), so any
/// cell can be re-rendered on demand without keeping every image in memory.
class SyntheticCohort {
 public:
  SyntheticCohort(GeneratorConfig config, std::uint64_t seed, int threads = 1);

  const GeneratorConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<CellSpec>& cells() const { return cells_; }
  const std::vector<DetectionRecord>& detections() const { return detections_; }
  const std::vector<SlideStats>& slides() const { return slides_; }
  /// Per-slide, per-channel intensity scale the slide was generated with.
  const std::vector<std::array<float, kChannels>>& nominal_max() const { return nominal_; }

  /// Raw kChannels×48×48 patch centred on the cell's detection.
  std::vector<float> render(std::int64_t cell_id) const;

 private:
  std::vector<float> render_tile(const CellSpec& cell, std::vector<unsigned char>* cytoplasm) const;

  GeneratorConfig config_;
  std::uint64_t seed_;
  std::vector<CellSpec> cells_;
  std::vector<DetectionRecord> detections_;
  std::vector<SlideStats> slides_;
  std::vector<std::array<float, kChannels>> nominal_;
};

struct SyntheticData {
  std::vector<CellSpec> cells;
  std::vector<std::vector<float>> raw;  // aligned with cells
  std::vector<DetectionRecord> detections;
  std::vector<SlideStats> slides;
};

/// Every cell rendered at once. Memory grows with the cohort; the dataset
/// builder streams instead.
SyntheticData generate_synthetic_dataset(const GeneratorConfig& config, std::uint64_t seed);

struct Dataset {
  std::vector<PatchRecord> records;  // normalized, sorted by cell id
  SplitManifest split;
  std::vector<SlideStats> slides;
  GeneratorConfig generator;
  std::uint64_t seed = 0;
  std::vector<DetectionRecord> detections;  // raw generator output, may be empty
  std::array<Index, kChannels> degenerate_channels{};  // patches with an all-zero channel

  std::vector<std::size_t> indices(Split split) const;
  Index count(Split split) const;
};

/// generate → clean → assign → balance → normalize → split.
Dataset build_dataset(const GeneratorConfig& config, std::uint64_t seed, int threads = 1);

/// Directory with manifest.json, images.svt, labels.csv and detections.csv.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Copies the images at `indices` into one N×9×48×48 buffer.
std::vector<float> gather_images(const Dataset& dataset, std::span<const std::size_t> indices);
std::vector<int> gather_labels(const Dataset& dataset, std::span<const std::size_t> indices);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace subvae
