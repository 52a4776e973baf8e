#include "subvae/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "json_io.hpp"
#include "subvae/svt.hpp"

namespace subvae {

using json = nlohmann::json;

namespace {

constexpr std::array<std::string_view, kChannels> kChannelNames{
    "PD1", "CD140b", "CD146", "Thy1", "PanCK", "CD8", "aSMA", "CD31", "DAPI"};
constexpr std::array<std::string_view, kPhenotypes> kPhenotypeNames{
    "Tumour", "iCAF", "myCAF", "TCell", "dPVL", "ExhaustedTCell"};
constexpr std::array<std::string_view, 3> kSplitNames{"train", "val", "test"};

constexpr Channel kTumourSig[] = {PanCK};
constexpr Channel kIcafSig[] = {CD140b};
constexpr Channel kMycafSig[] = {aSMA};
constexpr Channel kTcellSig[] = {CD8};
constexpr Channel kDpvlSig[] = {CD140b, CD146};
constexpr Channel kExhaustedSig[] = {PD1};

constexpr Index kTile = 64;
constexpr double kPositivityFraction = 0.4;
constexpr double kSignatureFloor = 0.55;

bool cytoplasmic(int channel) { return channel == PanCK || channel == aSMA; }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * std::generate_canonical<double, 53>(rng);
}

// Stream ids for the independent random sources of a cohort.
enum Stream : std::uint64_t { kLabels = 1, kCellSpec, kCellRender, kSlide, kBalance, kSplit };

std::mt19937_64 stream(std::uint64_t seed, Stream s, std::uint64_t index = 0) {
  return std::mt19937_64(mix_seed(mix_seed(seed, s), index));
}

const SlideStats& find_slide(std::span<const SlideStats> slides, std::int64_t slide_id) {
  for (const SlideStats& s : slides) {
    if (s.slide_id == slide_id) return s;
  }
  throw Error(ErrorKind::data, "no slide statistics for slide " + std::to_string(slide_id));
}

struct RenderedCell {
  std::vector<float> tile;  // kChannels × kTile × kTile
  int cx = 0;
  int cy = 0;
  std::vector<unsigned char> cytoplasm;  // kTile × kTile mask
};

std::string format_float(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  return fields;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::io, "write failed: " + path.string());
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ (stream * 0xD1B54A32D192ED03ull));
}

std::string_view channel_name(int channel) {
  if (channel < 0 || channel >= kChannels) {
    throw Error(ErrorKind::precondition, "channel index out of range");
  }
  return kChannelNames[static_cast<std::size_t>(channel)];
}

std::string_view to_string(Phenotype phenotype) {
  return kPhenotypeNames[static_cast<std::size_t>(phenotype)];
}

Phenotype parse_phenotype(std::string_view text) {
  for (int i = 0; i < kPhenotypes; ++i) {
    if (kPhenotypeNames[static_cast<std::size_t>(i)] == text) return static_cast<Phenotype>(i);
  }
  throw Error(ErrorKind::data, "unknown phenotype '" + std::string(text) + "'");
}

std::span<const Channel> signature(Phenotype phenotype) {
  switch (phenotype) {
    case Phenotype::Tumour: return kTumourSig;
    case Phenotype::iCAF: return kIcafSig;
    case Phenotype::myCAF: return kMycafSig;
    case Phenotype::TCell: return kTcellSig;
    case Phenotype::dPVL: return kDpvlSig;
    case Phenotype::ExhaustedTCell: return kExhaustedSig;
  }
  return {};
}

std::string_view to_string(Split split) { return kSplitNames[static_cast<std::size_t>(split)]; }

Split parse_split(std::string_view text) {
  for (int i = 0; i < 3; ++i) {
    if (kSplitNames[static_cast<std::size_t>(i)] == text) return static_cast<Split>(i);
  }
  throw Error(ErrorKind::data, "unknown split '" + std::string(text) + "'");
}

const std::vector<std::int64_t>& SplitManifest::ids(Split split) const {
  switch (split) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return train;
}

bool DetectionRecord::any_positive() const {
  return std::any_of(positive.begin(), positive.end(), [](bool b) { return b; });
}

float lower_threshold(int channel) {
  return channel == PanCK || channel == CD140b ? kDominantLowerThreshold : kLowerThreshold;
}

// ---------------------------------------------------------------------------
// Preprocessing

std::vector<float> normalize_patch(std::span<const float> raw, const SlideStats& stats,
                                   std::bitset<kChannels>* degenerate) {
  if (static_cast<Index>(raw.size()) != kPatchValues) {
    throw Error(ErrorKind::shape, "normalize_patch expects " + std::to_string(kPatchValues) +
                                      " values, got " + std::to_string(raw.size()));
  }
  std::vector<float> out(raw.size(), 0.f);
  if (degenerate) degenerate->reset();
  for (int c = 0; c < kChannels; ++c) {
    const float lo = lower_threshold(c);
    const float hi = stats.max[static_cast<std::size_t>(c)];
    if (!(hi > lo)) {
      if (degenerate) degenerate->set(static_cast<std::size_t>(c));
      continue;
    }
    const float range = hi - lo;
    const std::size_t base = static_cast<std::size_t>(c * kPatchPixels);
    for (std::size_t i = base; i < base + kPatchPixels; ++i) {
      out[i] = std::clamp((raw[i] - lo) / range, 0.f, 1.f);
    }
  }
  return out;
}

std::vector<DetectionRecord> clean_labels(std::span<const DetectionRecord> detections,
                                          std::span<const SlideStats> slides) {
  std::vector<DetectionRecord> out;
  out.reserve(detections.size());
  for (const DetectionRecord& det : detections) {
    const SlideStats& slide = find_slide(slides, det.slide_id);
    if (!det.any_positive()) continue;
    DetectionRecord r = det;
    for (int c = 0; c < kChannels; ++c) {
      if (r.max[static_cast<std::size_t>(c)] < kMinCellMax) r.positive[static_cast<std::size_t>(c)] = false;
    }
    if (r.panck_cytoplasm_mean < kMinPanckCytoplasmMean) r.positive[PanCK] = false;
    for (int c : {PanCK, CD140b}) {
      if (r.max[static_cast<std::size_t>(c)] < kMinSlideFraction * slide.max[static_cast<std::size_t>(c)]) {
        r.positive[static_cast<std::size_t>(c)] = false;
      }
    }
    if (!r.any_positive()) continue;
    out.push_back(r);
  }
  return out;
}

std::optional<Phenotype> assign_phenotype(const DetectionRecord& d) {
  const auto& p = d.positive;
  if (p[CD140b] && p[CD146]) return Phenotype::dPVL;
  if (p[PD1]) return Phenotype::ExhaustedTCell;
  if (p[CD8]) return Phenotype::TCell;
  if (p[aSMA]) return Phenotype::myCAF;
  if (p[CD140b]) return Phenotype::iCAF;
  if (p[PanCK]) return Phenotype::Tumour;
  return std::nullopt;
}

std::vector<std::size_t> balance_indices(std::span<const Phenotype> labels, Index per_class,
                                         std::uint64_t seed) {
  if (per_class < 1) throw Error(ErrorKind::precondition, "per-class count must be positive");
  std::array<std::vector<std::size_t>, kPhenotypes> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  chosen.reserve(static_cast<std::size_t>(per_class * kPhenotypes));
  for (int k = 0; k < kPhenotypes; ++k) {
    auto& pool = by_class[static_cast<std::size_t>(k)];
    if (static_cast<Index>(pool.size()) < per_class) {
      throw Error(ErrorKind::data, "class " + std::string(to_string(static_cast<Phenotype>(k))) +
                                       " has " + std::to_string(pool.size()) +
                                       " records, need " + std::to_string(per_class));
    }
    // Partial Fisher-Yates: the first per_class slots become the sample.
    for (Index i = 0; i < per_class; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), pool.size() - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[pick(rng)]);
    }
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + per_class);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<PatchRecord> balance_classes(std::span<const PatchRecord> records, Index per_class,
                                         std::uint64_t seed) {
  std::vector<Phenotype> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.push_back(r.label);
  std::vector<PatchRecord> out;
  for (std::size_t i : balance_indices(labels, per_class, seed)) out.push_back(records[i]);
  return out;
}

SplitManifest stratified_split(std::span<const std::int64_t> ids,
                               std::span<const Phenotype> labels, std::uint64_t seed) {
  if (ids.size() != labels.size()) {
    throw Error(ErrorKind::shape, "stratified_split: ids and labels differ in length");
  }
  std::array<std::vector<std::int64_t>, kPhenotypes> by_class;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    by_class[static_cast<std::size_t>(labels[i])].push_back(ids[i]);
  }
  SplitManifest m;
  m.seed = seed;
  std::mt19937_64 rng(seed);
  for (int k = 0; k < kPhenotypes; ++k) {
    auto& pool = by_class[static_cast<std::size_t>(k)];
    if (pool.empty()) continue;
    const Index n = static_cast<Index>(pool.size());
    if (n < 5) {
      throw Error(ErrorKind::data, "class " + std::string(to_string(static_cast<Phenotype>(k))) +
                                       " has " + std::to_string(n) +
                                       " records; a split needs at least 5");
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    const Index n_test = (2 * n + 5) / 10;
    const Index rest = n - n_test;
    const Index n_val = (15 * rest + 50) / 100;
    const Index n_train = rest - n_val;
    auto it = pool.begin();
    m.test.insert(m.test.end(), it, it + n_test);
    it += n_test;
    m.val.insert(m.val.end(), it, it + n_val);
    it += n_val;
    m.train.insert(m.train.end(), it, pool.end());
    m.counts[static_cast<std::size_t>(Split::train)][static_cast<std::size_t>(k)] = n_train;
    m.counts[static_cast<std::size_t>(Split::val)][static_cast<std::size_t>(k)] = n_val;
    m.counts[static_cast<std::size_t>(Split::test)][static_cast<std::size_t>(k)] = n_test;
  }
  std::sort(m.train.begin(), m.train.end());
  std::sort(m.val.begin(), m.val.end());
  std::sort(m.test.begin(), m.test.end());
  return m;
}

std::vector<float> extract_patch(std::span<const float> image, Index height, Index width, int x,
                                 int y) {
  if (static_cast<Index>(image.size()) != kChannels * height * width) {
    throw Error(ErrorKind::shape, "extract_patch: image is not " + std::to_string(kChannels) +
                                      "x" + std::to_string(height) + "x" + std::to_string(width));
  }
  std::vector<float> out(static_cast<std::size_t>(kPatchValues), 0.f);
  const Index top = y - kPatchSize / 2;
  const Index left = x - kPatchSize / 2;
  const Index c0 = std::max<Index>(0, -left);
  const Index c1 = std::min<Index>(kPatchSize, width - left);
  for (Index c = 0; c < kChannels; ++c) {
    for (Index r = 0; r < kPatchSize; ++r) {
      const Index sr = top + r;
      if (sr < 0 || sr >= height || c0 >= c1) continue;
      const float* src = image.data() + (c * height + sr) * width + left;
      float* dst = out.data() + (c * kPatchSize + r) * kPatchSize;
      std::copy(src + c0, src + c1, dst + c0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic cohort

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::config, msg); };
  if (slides < 1) fail("generator.slides must be >= 1");
  if (cells_per_class < 1) fail("generator.cells_per_class must be >= 1");
  if (!(oversample >= 1.0)) fail("generator.oversample must be >= 1");
  if (!(excluded_fraction >= 0 && excluded_fraction < 1)) fail("generator.excluded_fraction must be in [0,1)");
  if (!(noise >= 0)) fail("generator.noise must be >= 0");
  if (!(difficulty >= 0 && difficulty <= 1)) fail("generator.difficulty must be in [0,1]");
  if (!(violation_rate >= 0 && violation_rate <= 1)) fail("generator.violation_rate must be in [0,1]");
  if (!(min_slide_max > 0 && max_slide_max >= min_slide_max)) fail("generator slide max range is invalid");
}

namespace {

RenderedCell render_cell(const CellSpec& cell, const std::array<float, kChannels>& nominal,
                         const GeneratorConfig& cfg, std::uint64_t seed) {
  auto rng = stream(seed, kCellRender, static_cast<std::uint64_t>(cell.cell_id));
  RenderedCell out;
  std::uniform_int_distribution<int> jitter(-3, 3);
  out.cx = static_cast<int>(kTile / 2) + jitter(rng);
  out.cy = static_cast<int>(kTile / 2) + jitter(rng);
  const double a = uniform(rng, 4.5, 7.0);
  const double b = uniform(rng, 3.5, 6.0);
  const double theta = uniform(rng, 0.0, std::numbers::pi);
  const double outer = uniform(rng, 1.6, 2.0);
  const double membrane = 0.8 * outer;

  std::array<double, kChannels> level{};
  level[DAPI] = uniform(rng, 0.6, 1.0) * nominal[DAPI];
  std::array<bool, kChannels> is_signature{};
  if (cell.phenotype) {
    for (Channel c : signature(*cell.phenotype)) is_signature[c] = true;
  } else {
    is_signature[cell.excluded_marker] = true;
  }
  for (int c = 0; c < DAPI; ++c) {
    const double m = nominal[static_cast<std::size_t>(c)];
    const double bleed_hi = cfg.difficulty * 0.3 * m;
    const double sig = uniform(rng, std::max(0.6 * m, kSignatureFloor), m);
    const double bleed = uniform(rng, 0.0, bleed_hi);
    level[static_cast<std::size_t>(c)] = is_signature[static_cast<std::size_t>(c)] ? sig : bleed;
  }
  int blank = -1;
  {
    const bool coin = uniform(rng, 0.0, 1.0) < 0.5;
    if (cell.violation == Violation::blank_channel && cell.phenotype) {
      const bool panck_taken = is_signature[PanCK];
      const bool cd140b_taken = is_signature[CD140b];
      if (panck_taken) blank = CD140b;
      else if (cd140b_taken) blank = PanCK;
      else blank = coin ? PanCK : CD140b;
    }
  }

  out.tile.assign(static_cast<std::size_t>(kChannels * kTile * kTile), 0.f);
  out.cytoplasm.assign(static_cast<std::size_t>(kTile * kTile), 0);
  std::vector<unsigned char> region(static_cast<std::size_t>(kTile * kTile), 0);  // 1 nucleus, 2 cytoplasm, 3 membrane
  const double ct = std::cos(theta), st = std::sin(theta);
  for (Index py = 0; py < kTile; ++py) {
    for (Index px = 0; px < kTile; ++px) {
      const double dx = static_cast<double>(px - out.cx);
      const double dy = static_cast<double>(py - out.cy);
      const double u = (dx * ct + dy * st) / a;
      const double v = (-dx * st + dy * ct) / b;
      const double r = std::sqrt(u * u + v * v);
      unsigned char kind = 0;
      if (r <= 1.0) kind = 1;
      else if (r <= membrane) kind = 2;
      else if (r <= outer) kind = 3;
      region[static_cast<std::size_t>(py * kTile + px)] = kind;
      out.cytoplasm[static_cast<std::size_t>(py * kTile + px)] = kind >= 2;
    }
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int c = 0; c < kChannels; ++c) {
    float* plane = out.tile.data() + static_cast<std::size_t>(c) * kTile * kTile;
    for (Index i = 0; i < kTile * kTile; ++i) {
      const unsigned char kind = region[static_cast<std::size_t>(i)];
      bool inside;
      if (c == DAPI) inside = kind == 1;
      else if (cytoplasmic(c)) inside = kind >= 2;
      else inside = kind == 3;
      const double signal = inside ? level[static_cast<std::size_t>(c)] : 0.0;
      const double value = signal + cfg.noise * gauss(rng);
      plane[i] = c == blank ? 0.f : static_cast<float>(std::max(0.0, value));
    }
  }
  return out;
}

}  // namespace

SyntheticCohort::SyntheticCohort(GeneratorConfig config, std::uint64_t seed, int threads)
    : config_(config), seed_(seed) {
  config_.validate();
  const Index per_class = static_cast<Index>(
      std::ceil(static_cast<double>(config_.cells_per_class) * config_.oversample));
  const Index labelled = per_class * kPhenotypes;
  const Index excluded = static_cast<Index>(std::llround(
      static_cast<double>(labelled) * config_.excluded_fraction / (1.0 - config_.excluded_fraction)));

  struct Draw {
    std::optional<Phenotype> phenotype;
    Channel marker = CD31;
  };
  std::vector<Draw> draws;
  draws.reserve(static_cast<std::size_t>(labelled + excluded));
  for (int k = 0; k < kPhenotypes; ++k) {
    for (Index i = 0; i < per_class; ++i) draws.push_back({static_cast<Phenotype>(k), CD31});
  }
  for (Index i = 0; i < excluded; ++i) draws.push_back({std::nullopt, i % 2 == 0 ? CD31 : Thy1});
  auto label_rng = stream(seed_, kLabels);
  std::shuffle(draws.begin(), draws.end(), label_rng);

  cells_.resize(draws.size());
  for (std::size_t i = 0; i < draws.size(); ++i) {
    CellSpec& cell = cells_[i];
    cell.cell_id = static_cast<std::int64_t>(i);
    cell.slide_id = static_cast<std::int64_t>(i % static_cast<std::size_t>(config_.slides));
    cell.phenotype = draws[i].phenotype;
    cell.excluded_marker = draws[i].marker;
    auto rng = stream(seed_, kCellSpec, i);
    const double u = uniform(rng, 0.0, 1.0);
    const int kind = std::uniform_int_distribution<int>(1, 4)(rng);
    if (cell.phenotype && u < config_.violation_rate) cell.violation = static_cast<Violation>(kind);
  }

  nominal_.resize(static_cast<std::size_t>(config_.slides));
  for (Index s = 0; s < config_.slides; ++s) {
    auto rng = stream(seed_, kSlide, static_cast<std::uint64_t>(s));
    for (auto& m : nominal_[static_cast<std::size_t>(s)]) {
      m = static_cast<float>(uniform(rng, config_.min_slide_max, config_.max_slide_max));
    }
  }

  // Pass 1: per-cell statistics; images are discarded.
  detections_.resize(cells_.size());
  const std::int64_t n = static_cast<std::int64_t>(cells_.size());
#pragma omp parallel for schedule(dynamic, 16) num_threads(std::max(1, threads))
  for (std::int64_t i = 0; i < n; ++i) {
    const CellSpec& cell = cells_[static_cast<std::size_t>(i)];
    RenderedCell rc = render_cell(cell, nominal_[static_cast<std::size_t>(cell.slide_id)], config_, seed_);
    const auto patch = extract_patch(rc.tile, kTile, kTile, rc.cx, rc.cy);
    DetectionRecord& det = detections_[static_cast<std::size_t>(i)];
    det.cell_id = cell.cell_id;
    det.slide_id = cell.slide_id;
    det.center = {rc.cx, rc.cy};
    for (Index c = 0; c < kChannels; ++c) {
      const auto begin = patch.begin() + c * kPatchPixels;
      det.max[static_cast<std::size_t>(c)] = *std::max_element(begin, begin + kPatchPixels);
    }
    double sum = 0;
    Index count = 0;
    const float* panck = rc.tile.data() + static_cast<std::size_t>(PanCK) * kTile * kTile;
    for (Index p = 0; p < kTile * kTile; ++p) {
      if (rc.cytoplasm[static_cast<std::size_t>(p)]) {
        sum += panck[p];
        ++count;
      }
    }
    det.panck_cytoplasm_mean = count ? static_cast<float>(sum / static_cast<double>(count)) : 0.f;
  }

  slides_.resize(static_cast<std::size_t>(config_.slides));
  for (Index s = 0; s < config_.slides; ++s) slides_[static_cast<std::size_t>(s)].slide_id = s;
  for (const auto& det : detections_) {
    auto& slide = slides_[static_cast<std::size_t>(det.slide_id)];
    for (int c = 0; c < kChannels; ++c) {
      slide.max[static_cast<std::size_t>(c)] = std::max(slide.max[static_cast<std::size_t>(c)], det.max[static_cast<std::size_t>(c)]);
    }
  }

  // Positivity calls, then the deliberate rule violations.
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    DetectionRecord& det = detections_[i];
    const SlideStats& slide = slides_[static_cast<std::size_t>(det.slide_id)];
    for (int c = 0; c < DAPI; ++c) {
      det.positive[static_cast<std::size_t>(c)] =
          det.max[static_cast<std::size_t>(c)] >= kPositivityFraction * slide.max[static_cast<std::size_t>(c)];
    }
    CellSpec& cell = cells_[i];
    auto rng = stream(seed_, kCellSpec, i);
    auto weak_candidates = [&] {
      std::vector<int> out;
      for (int c = 0; c < DAPI; ++c) {
        if (!det.positive[static_cast<std::size_t>(c)] && det.max[static_cast<std::size_t>(c)] < kMinCellMax) out.push_back(c);
      }
      return out;
    };
    switch (cell.violation) {
      case Violation::none:
        break;
      case Violation::blank_channel:
        det.positive[PanCK] = det.positive[PanCK] || det.max[PanCK] == 0.f;
        det.positive[CD140b] = det.positive[CD140b] || det.max[CD140b] == 0.f;
        break;
      case Violation::panck_cytoplasm:
        if (!det.positive[PanCK] && det.panck_cytoplasm_mean < kMinPanckCytoplasmMean) {
          det.positive[PanCK] = true;
          break;
        }
        cell.violation = Violation::weak_signal;
        [[fallthrough]];
      case Violation::weak_signal: {
        const auto candidates = weak_candidates();
        if (!candidates.empty()) {
          std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
          det.positive[static_cast<std::size_t>(candidates[pick(rng)])] = true;
          break;
        }
        cell.violation = Violation::no_positivity;
        [[fallthrough]];
      }
      case Violation::no_positivity:
        det.positive.fill(false);
        break;
    }
  }
}

std::vector<float> SyntheticCohort::render(std::int64_t cell_id) const {
  if (cell_id < 0 || cell_id >= static_cast<std::int64_t>(cells_.size())) {
    throw Error(ErrorKind::precondition, "no cell " + std::to_string(cell_id));
  }
  const CellSpec& cell = cells_[static_cast<std::size_t>(cell_id)];
  RenderedCell rc = render_cell(cell, nominal_[static_cast<std::size_t>(cell.slide_id)], config_, seed_);
  return extract_patch(rc.tile, kTile, kTile, rc.cx, rc.cy);
}

SyntheticData generate_synthetic_dataset(const GeneratorConfig& config, std::uint64_t seed) {
  SyntheticCohort cohort(config, seed);
  SyntheticData data;
  data.cells = cohort.cells();
  data.detections = cohort.detections();
  data.slides = cohort.slides();
  data.raw.reserve(data.cells.size());
  for (const auto& cell : data.cells) data.raw.push_back(cohort.render(cell.cell_id));
  return data;
}

// ---------------------------------------------------------------------------
// Dataset

std::vector<std::size_t> Dataset::indices(Split which) const {
  const auto& ids = split.ids(which);
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  std::size_t r = 0;
  for (std::int64_t id : ids) {
    while (r < records.size() && records[r].cell_id < id) ++r;
    if (r == records.size() || records[r].cell_id != id) {
      throw Error(ErrorKind::data, "split references missing cell " + std::to_string(id));
    }
    out.push_back(r);
  }
  return out;
}

Index Dataset::count(Split which) const { return static_cast<Index>(split.ids(which).size()); }

Dataset build_dataset(const GeneratorConfig& config, std::uint64_t seed, int threads) {
  SyntheticCohort cohort(config, seed, threads);
  const auto cleaned = clean_labels(cohort.detections(), cohort.slides());
  std::vector<DetectionRecord> labelled;
  std::vector<Phenotype> labels;
  for (const auto& det : cleaned) {
    if (auto p = assign_phenotype(det)) {
      labelled.push_back(det);
      labels.push_back(*p);
    }
  }
  const auto chosen = balance_indices(labels, config.cells_per_class, mix_seed(seed, kBalance));

  Dataset ds;
  ds.generator = config;
  ds.seed = seed;
  ds.slides = cohort.slides();
  ds.detections = cohort.detections();
  ds.records.resize(chosen.size());
  std::vector<std::bitset<kChannels>> degenerate(chosen.size());
  const std::int64_t n = static_cast<std::int64_t>(chosen.size());
#pragma omp parallel for schedule(dynamic, 16) num_threads(std::max(1, threads))
  for (std::int64_t i = 0; i < n; ++i) {
    const DetectionRecord& det = labelled[chosen[static_cast<std::size_t>(i)]];
    PatchRecord& rec = ds.records[static_cast<std::size_t>(i)];
    rec.cell_id = det.cell_id;
    rec.slide_id = det.slide_id;
    rec.label = labels[chosen[static_cast<std::size_t>(i)]];
    rec.image = normalize_patch(cohort.render(det.cell_id),
                                ds.slides[static_cast<std::size_t>(det.slide_id)],
                                &degenerate[static_cast<std::size_t>(i)]);
  }
  for (const auto& d : degenerate) {
    for (int c = 0; c < kChannels; ++c) ds.degenerate_channels[static_cast<std::size_t>(c)] += d[static_cast<std::size_t>(c)];
  }

  std::vector<std::int64_t> ids;
  std::vector<Phenotype> rec_labels;
  for (const auto& r : ds.records) {
    ids.push_back(r.cell_id);
    rec_labels.push_back(r.label);
  }
  ds.split = stratified_split(ids, rec_labels, mix_seed(seed, kSplit));
  return ds;
}


void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  json manifest;
  manifest["format"] = "subvae-dataset-1";
  manifest["channels"] = json::array();
  for (int c = 0; c < kChannels; ++c) manifest["channels"].push_back(channel_name(c));
  manifest["phenotypes"] = json::array();
  for (int k = 0; k < kPhenotypes; ++k) manifest["phenotypes"].push_back(to_string(static_cast<Phenotype>(k)));
  manifest["patch_shape"] = {kChannels, kPatchSize, kPatchSize};
  manifest["count"] = ds.records.size();
  manifest["seed"] = ds.seed;
  manifest["generator"] = detail::generator_json(ds.generator);
  std::array<Index, kPhenotypes> class_counts{};
  for (const auto& r : ds.records) ++class_counts[static_cast<std::size_t>(r.label)];
  manifest["class_counts"] = class_counts;
  manifest["degenerate_channels"] = ds.degenerate_channels;
  json slides = json::array();
  for (const auto& s : ds.slides) slides.push_back({{"slide_id", s.slide_id}, {"max", s.max}});
  manifest["slides"] = slides;
  json split;
  split["seed"] = ds.split.seed;
  for (int s = 0; s < 3; ++s) {
    const auto name = std::string(to_string(static_cast<Split>(s)));
    split[name] = ds.split.ids(static_cast<Split>(s));
    split["counts"][name] = ds.split.counts[static_cast<std::size_t>(s)];
  }
  manifest["split"] = split;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  std::vector<Split> split_of(ds.records.size(), Split::train);
  for (int s = 0; s < 3; ++s) {
    for (std::size_t i : ds.indices(static_cast<Split>(s))) split_of[i] = static_cast<Split>(s);
  }
  std::string labels = "cell_id,slide_id,label,split\n";
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    labels += std::to_string(r.cell_id) + "," + std::to_string(r.slide_id) + "," +
              std::string(to_string(r.label)) + "," + std::string(to_string(split_of[i])) + "\n";
  }
  write_text(dir / "labels.csv", labels);

  std::string dets = "cell_id,slide_id,x,y";
  for (int c = 0; c < kChannels; ++c) dets += ",max_" + std::string(channel_name(c));
  for (int c = 0; c < kChannels; ++c) dets += ",positive_" + std::string(channel_name(c));
  dets += ",panck_cytoplasm_mean\n";
  for (const auto& d : ds.detections) {
    dets += std::to_string(d.cell_id) + "," + std::to_string(d.slide_id) + "," +
            std::to_string(d.center[0]) + "," + std::to_string(d.center[1]);
    for (float v : d.max) dets += "," + format_float(v);
    for (bool b : d.positive) dets += b ? ",1" : ",0";
    dets += "," + format_float(d.panck_cytoplasm_mean) + "\n";
  }
  write_text(dir / "detections.csv", dets);

  std::vector<float> images;
  images.reserve(ds.records.size() * static_cast<std::size_t>(kPatchValues));
  for (const auto& r : ds.records) images.insert(images.end(), r.image.begin(), r.image.end());
  write_svt(dir / "images.svt",
            {static_cast<Index>(ds.records.size()), kChannels, kPatchSize, kPatchSize}, images);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorKind::io, "cannot read " + (dir / "manifest.json").string());
  Dataset ds;
  Index count = 0;
  try {
    const json manifest = json::parse(in);
    if (manifest.at("format") != "subvae-dataset-1") {
      throw Error(ErrorKind::data, "unsupported dataset format in " + dir.string());
    }
    const auto channels = manifest.at("channels").get<std::vector<std::string>>();
    for (int c = 0; c < kChannels; ++c) {
      if (channels.size() != static_cast<std::size_t>(kChannels) || channels[static_cast<std::size_t>(c)] != channel_name(c)) {
        throw Error(ErrorKind::data, "dataset channel order does not match");
      }
    }
    count = manifest.at("count").get<Index>();
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.generator = detail::generator_from_json(manifest.at("generator"));
    ds.degenerate_channels = manifest.at("degenerate_channels").get<std::array<Index, kChannels>>();
    for (const auto& s : manifest.at("slides")) {
      ds.slides.push_back({s.at("slide_id").get<std::int64_t>(), s.at("max").get<std::array<float, kChannels>>()});
    }
    const json& split = manifest.at("split");
    ds.split.seed = split.at("seed").get<std::uint64_t>();
    ds.split.train = split.at("train").get<std::vector<std::int64_t>>();
    ds.split.val = split.at("val").get<std::vector<std::int64_t>>();
    ds.split.test = split.at("test").get<std::vector<std::int64_t>>();
    for (int s = 0; s < 3; ++s) {
      ds.split.counts[static_cast<std::size_t>(s)] =
          split.at("counts").at(std::string(to_string(static_cast<Split>(s))))
              .get<std::array<Index, kPhenotypes>>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::data, "malformed dataset manifest: " + std::string(e.what()));
  }

  const SvtArray images = read_svt(dir / "images.svt");
  if (images.shape != Shape{count, kChannels, kPatchSize, kPatchSize}) {
    throw Error(ErrorKind::data, "images.svt has shape " + to_string(images.shape));
  }
  std::ifstream labels(dir / "labels.csv");
  if (!labels) throw Error(ErrorKind::io, "cannot read " + (dir / "labels.csv").string());
  std::string line;
  std::getline(labels, line);
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 4) throw Error(ErrorKind::data, "labels.csv: bad row '" + line + "'");
    PatchRecord r;
    r.cell_id = std::stoll(f[0]);
    r.slide_id = std::stoll(f[1]);
    r.label = parse_phenotype(f[2]);
    const std::size_t i = ds.records.size();
    if (static_cast<Index>(i) >= count) throw Error(ErrorKind::data, "labels.csv has extra rows");
    r.image.assign(images.values.begin() + static_cast<std::ptrdiff_t>(i * kPatchValues),
                   images.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * kPatchValues));
    ds.records.push_back(std::move(r));
  }
  if (static_cast<Index>(ds.records.size()) != count) {
    throw Error(ErrorKind::data, "labels.csv has " + std::to_string(ds.records.size()) +
                                     " rows, manifest says " + std::to_string(count));
  }
  ds.indices(Split::train);
  ds.indices(Split::val);
  ds.indices(Split::test);
  return ds;
}

std::vector<float> gather_images(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<float> out;
  out.reserve(indices.size() * static_cast<std::size_t>(kPatchValues));
  for (std::size_t i : indices) {
    const auto& img = ds.records.at(i).image;
    out.insert(out.end(), img.begin(), img.end());
  }
  return out;
}

std::vector<int> gather_labels(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(static_cast<int>(ds.records.at(i).label));
  return out;
}

}  // namespace subvae
