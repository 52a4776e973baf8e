#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "clean_oracle.hpp"
#include "subvae/data.hpp"
#include "test_util.hpp"

using namespace subvae;
using namespace subvae::testing;

namespace {

GeneratorConfig small_config(double difficulty) {
  GeneratorConfig g;
  g.slides = 4;
  g.cells_per_class = 40;
  g.difficulty = difficulty;
  return g;
}

std::vector<float> ramp_patch(float lo, float hi) {
  std::vector<float> raw(static_cast<std::size_t>(kPatchValues));
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = lo + (hi - lo) * static_cast<float>(i % 97) / 96.f;
  }
  return raw;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("subvae_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("channel and phenotype vocabularies") {
  CHECK(channel_name(PD1) == "PD1");
  CHECK(channel_name(DAPI) == "DAPI");
  CHECK(channel_name(PanCK) == "PanCK");
  CHECK_THROWS_AS(channel_name(9), Error);
  for (int k = 0; k < kPhenotypes; ++k) {
    const auto p = static_cast<Phenotype>(k);
    CHECK(parse_phenotype(to_string(p)) == p);
  }
  CHECK_THROWS_AS(parse_phenotype("Endothelial"), Error);
}

TEST_CASE("normalize_patch boundaries and hand values") {
  SlideStats stats;
  stats.max.fill(1.0f);
  std::vector<float> raw(static_cast<std::size_t>(kPatchValues), 0.f);
  auto at = [](int c, int i) { return static_cast<std::size_t>(c * kPatchPixels + i); };
  raw[at(PanCK, 0)] = 0.5f;   // lower threshold
  raw[at(PanCK, 1)] = 1.0f;   // slide max
  raw[at(PanCK, 2)] = 0.75f;  // (0.75 - 0.5) / 0.5
  raw[at(CD8, 0)] = 0.3f;
  raw[at(CD8, 1)] = 1.0f;
  raw[at(CD8, 2)] = 0.2f;  // below threshold
  raw[at(CD8, 3)] = 7.0f;  // above slide max
  const auto out = normalize_patch(raw, stats);
  CHECK(out[at(PanCK, 0)] == 0.0f);
  CHECK(out[at(PanCK, 1)] == 1.0f);
  CHECK(out[at(PanCK, 2)] == doctest::Approx(0.5f).epsilon(1e-7));
  CHECK(out[at(CD8, 0)] == 0.0f);
  CHECK(out[at(CD8, 1)] == 1.0f);
  CHECK(out[at(CD8, 2)] == 0.0f);
  CHECK(out[at(CD8, 3)] == 1.0f);

  SUBCASE("boundaries hold for arbitrary slide maxima") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> m(0.8f, 4.0f);
    for (int trial = 0; trial < 50; ++trial) {
      SlideStats s;
      for (auto& v : s.max) v = m(rng);
      std::vector<float> r(static_cast<std::size_t>(kPatchValues), 0.f);
      for (int c = 0; c < kChannels; ++c) {
        r[at(c, 0)] = lower_threshold(c);
        r[at(c, 1)] = s.max[c];
      }
      const auto o = normalize_patch(r, s);
      for (int c = 0; c < kChannels; ++c) {
        CHECK(o[at(c, 0)] == 0.0f);
        CHECK(o[at(c, 1)] == 1.0f);
      }
    }
  }

  SUBCASE("output always in [0, 1]") {
    SlideStats s;
    s.max.fill(2.0f);
    const auto o = normalize_patch(ramp_patch(-1.f, 5.f), s);
    for (float v : o) CHECK((v >= 0.f && v <= 1.f));
  }

  SUBCASE("degenerate channel is zeroed and reported") {
    SlideStats s;
    s.max.fill(2.0f);
    s.max[CD31] = 0.3f;  // not above its threshold
    std::bitset<kChannels> degenerate;
    const auto o = normalize_patch(ramp_patch(0.f, 3.f), s, &degenerate);
    CHECK(degenerate.count() == 1);
    CHECK(degenerate.test(CD31));
    for (int i = 0; i < kPatchPixels; ++i) CHECK(o[at(CD31, i)] == 0.f);
  }

  SUBCASE("wrong size is rejected") {
    std::vector<float> small(10, 0.f);
    CHECK_THROWS_AS(normalize_patch(small, stats), Error);
  }
}

TEST_CASE("clean_labels rule examples") {
  SlideStats slide{0, {}};
  slide.max.fill(2.0f);
  const SlideStats slides[] = {slide};
  DetectionRecord base;
  base.max.fill(1.0f);
  base.panck_cytoplasm_mean = 0.9f;

  SUBCASE("no positivity is removed") {
    CHECK(clean_labels(std::span(&base, 1), slides).empty());
  }
  SUBCASE("weak cell maximum clears the flag") {
    DetectionRecord d = base;
    d.positive[CD8] = true;
    d.positive[PD1] = true;
    d.max[PD1] = 0.49f;
    const auto out = clean_labels(std::span(&d, 1), slides);
    REQUIRE(out.size() == 1);
    CHECK(out[0].positive[CD8]);
    CHECK_FALSE(out[0].positive[PD1]);
  }
  SUBCASE("cytoplasm mean 0.4 clears PanCK") {
    DetectionRecord d = base;
    d.positive[PanCK] = true;
    d.positive[CD8] = true;
    d.panck_cytoplasm_mean = 0.4f;
    const auto out = clean_labels(std::span(&d, 1), slides);
    REQUIRE(out.size() == 1);
    CHECK_FALSE(out[0].positive[PanCK]);
  }
  SUBCASE("CD140b below 1% of the slide maximum is cleared") {
    SlideStats big{0, {}};
    big.max.fill(100.0f);
    const SlideStats bigs[] = {big};
    DetectionRecord d = base;
    d.positive[CD140b] = true;
    d.positive[CD8] = true;
    d.max[CD140b] = 0.9f;  // 0.009 × slide max, above the 0.5 absolute rule
    const auto out = clean_labels(std::span(&d, 1), bigs);
    REQUIRE(out.size() == 1);
    CHECK_FALSE(out[0].positive[CD140b]);
    CHECK(out[0].positive[CD8]);
  }
  SUBCASE("thresholds are strict") {
    DetectionRecord d = base;
    d.positive[PanCK] = true;
    d.max[PanCK] = 0.5f;
    d.panck_cytoplasm_mean = 0.5f;
    const auto out = clean_labels(std::span(&d, 1), slides);
    REQUIRE(out.size() == 1);
    CHECK(out[0].positive[PanCK]);
  }
  SUBCASE("a record cleared of every flag is dropped") {
    DetectionRecord d = base;
    d.positive[PD1] = true;
    d.max[PD1] = 0.1f;
    CHECK(clean_labels(std::span(&d, 1), slides).empty());
  }
  SUBCASE("missing slide statistics") {
    DetectionRecord d = base;
    d.positive[CD8] = true;
    d.slide_id = 5;
    CHECK_THROWS_AS(clean_labels(std::span(&d, 1), slides), Error);
  }
}

TEST_CASE("clean_labels matches a straight-line oracle on 1000 random records") {
  std::mt19937_64 rng(2024);
  std::vector<SlideStats> slides;
  for (int s = 0; s < 5; ++s) {
    SlideStats st{s, {}};
    for (auto& m : st.max) m = std::uniform_real_distribution<float>(0.5f, 80.f)(rng);
    slides.push_back(st);
  }
  // Values cluster around the rule thresholds so every branch fires.
  const float pool[] = {0.f, 0.004f, 0.2f, 0.49999f, 0.5f, 0.50001f, 0.6f, 0.8f, 1.5f, 3.f};
  std::uniform_int_distribution<std::size_t> pick(0, std::size(pool) - 1);
  std::bernoulli_distribution flag(0.3);
  std::uniform_real_distribution<float> any(0.f, 4.f);
  std::vector<DetectionRecord> dets(1000);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    auto& d = dets[i];
    d.cell_id = static_cast<std::int64_t>(i);
    d.slide_id = static_cast<std::int64_t>(i % slides.size());
    for (int c = 0; c < kChannels; ++c) {
      d.max[c] = flag(rng) ? any(rng) : pool[pick(rng)];
      d.positive[c] = flag(rng);
    }
    d.panck_cytoplasm_mean = flag(rng) ? any(rng) : pool[pick(rng)];
  }
  std::vector<DetectionRecord> expected;
  for (const auto& d : dets) {
    if (auto r = oracle_clean(d, slides[static_cast<std::size_t>(d.slide_id)])) expected.push_back(*r);
  }
  const auto got = clean_labels(dets, slides);
  REQUIRE(got.size() == expected.size());
  CHECK(got == expected);
  CHECK(got.size() < dets.size());
  CHECK(got.size() > 100);
  // Clearing never sets a flag.
  std::size_t j = 0;
  for (const auto& d : dets) {
    if (j < got.size() && got[j].cell_id == d.cell_id) {
      for (int c = 0; c < kChannels; ++c) CHECK((!got[j].positive[c] || d.positive[c]));
      ++j;
    }
  }
}

TEST_CASE("assign_phenotype priority") {
  DetectionRecord d;
  auto with = [&](std::initializer_list<Channel> on) {
    DetectionRecord r;
    for (Channel c : on) r.positive[c] = true;
    return assign_phenotype(r);
  };
  CHECK(with({CD140b, CD146}) == Phenotype::dPVL);
  CHECK(with({PanCK}) == Phenotype::Tumour);
  CHECK(with({CD31}) == std::nullopt);
  CHECK(with({Thy1}) == std::nullopt);
  CHECK(with({}) == std::nullopt);
  CHECK(with({CD140b}) == Phenotype::iCAF);
  CHECK(with({aSMA, CD140b}) == Phenotype::myCAF);
  CHECK(with({CD8}) == Phenotype::TCell);
  CHECK(with({PD1, CD8}) == Phenotype::ExhaustedTCell);
  CHECK(with({PD1, CD140b, CD146}) == Phenotype::dPVL);
  CHECK(with({PanCK, CD8}) == Phenotype::TCell);
  // Every phenotype's own signature maps back to it.
  for (int k = 0; k < kPhenotypes; ++k) {
    DetectionRecord r;
    for (Channel c : signature(static_cast<Phenotype>(k))) r.positive[c] = true;
    CHECK(assign_phenotype(r) == static_cast<Phenotype>(k));
  }
}

TEST_CASE("balance_classes") {
  std::vector<Phenotype> labels;
  for (int k = 0; k < kPhenotypes; ++k) {
    for (int i = 0; i < 7400 + 13 * k; ++i) labels.push_back(static_cast<Phenotype>(k));
  }
  std::shuffle(labels.begin(), labels.end(), std::mt19937_64(5));

  const auto big = balance_indices(labels, 7400, 9);
  CHECK(big.size() == 44400);
  std::array<int, kPhenotypes> counts{};
  for (std::size_t i : big) ++counts[static_cast<std::size_t>(labels[i])];
  for (int c : counts) CHECK(c == 7400);
  CHECK(std::set<std::size_t>(big.begin(), big.end()).size() == big.size());

  CHECK(balance_indices(labels, 1, 9).size() == 6);
  CHECK(balance_indices(labels, 50, 9) == balance_indices(labels, 50, 9));
  CHECK(balance_indices(labels, 50, 9) != balance_indices(labels, 50, 10));
  CHECK_THROWS_AS(balance_indices(labels, 7414, 9), Error);

  std::vector<PatchRecord> records(12);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].cell_id = static_cast<std::int64_t>(i);
    records[i].label = static_cast<Phenotype>(i % kPhenotypes);
  }
  const auto picked = balance_classes(records, 2, 1);
  CHECK(picked.size() == 12);
  CHECK_THROWS_AS(balance_classes(records, 3, 1), Error);
}

TEST_CASE("stratified_split of 600 balanced records") {
  std::vector<std::int64_t> ids;
  std::vector<Phenotype> labels;
  for (int i = 0; i < 600; ++i) {
    ids.push_back(1000 + i);
    labels.push_back(static_cast<Phenotype>(i % kPhenotypes));
  }
  const auto m = stratified_split(ids, labels, 77);
  // 100 per class: test 0.2·100, val 0.15·80, train the rest.
  CHECK(m.test.size() == 120);
  CHECK(m.val.size() == 72);
  CHECK(m.train.size() == 408);
  for (int k = 0; k < kPhenotypes; ++k) {
    CHECK(m.counts[2][k] == 20);
    CHECK(m.counts[1][k] == 12);
    CHECK(m.counts[0][k] == 68);
  }
  CHECK(stratified_split(ids, labels, 77).train == m.train);
  CHECK(stratified_split(ids, labels, 78).train != m.train);

  std::vector<std::int64_t> few(ids.begin(), ids.begin() + 24);
  std::vector<Phenotype> few_labels(labels.begin(), labels.begin() + 24);
  CHECK_THROWS_AS(stratified_split(few, few_labels, 1), Error);  // 4 per class
}

TEST_CASE("stratified_split invariants over 100 seeded trials") {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 100; ++trial) {
    // Mostly small classes, with a few large ones up to 10,000.
    std::array<Index, kPhenotypes> sizes{};
    for (auto& s : sizes) {
      s = trial % 10 == 0 ? std::uniform_int_distribution<Index>(5, 10000)(rng)
                          : std::uniform_int_distribution<Index>(5, 400)(rng);
    }
    std::vector<std::int64_t> ids;
    std::vector<Phenotype> labels;
    for (int k = 0; k < kPhenotypes; ++k) {
      for (Index i = 0; i < sizes[k]; ++i) labels.push_back(static_cast<Phenotype>(k));
    }
    std::shuffle(labels.begin(), labels.end(), rng);
    for (std::size_t i = 0; i < labels.size(); ++i) ids.push_back(static_cast<std::int64_t>(3 * i + 1));
    const auto m = stratified_split(ids, labels, rng());

    // Disjoint and exhaustive.
    std::set<std::int64_t> all;
    for (auto* part : {&m.train, &m.val, &m.test}) {
      CHECK(std::is_sorted(part->begin(), part->end()));
      all.insert(part->begin(), part->end());
    }
    CHECK(all.size() == ids.size());
    CHECK(static_cast<std::size_t>(m.size()) == ids.size());
    CHECK(all == std::set<std::int64_t>(ids.begin(), ids.end()));

    // Fractions per class, each within one record of the exact share.
    std::map<std::int64_t, Phenotype> label_of;
    for (std::size_t i = 0; i < ids.size(); ++i) label_of[ids[i]] = labels[i];
    for (int k = 0; k < kPhenotypes; ++k) {
      const double n = static_cast<double>(sizes[k]);
      Index test = 0, val = 0, train = 0;
      for (auto id : m.test) test += label_of[id] == static_cast<Phenotype>(k);
      for (auto id : m.val) val += label_of[id] == static_cast<Phenotype>(k);
      for (auto id : m.train) train += label_of[id] == static_cast<Phenotype>(k);
      CHECK(test == m.counts[2][k]);
      CHECK(val == m.counts[1][k]);
      CHECK(train == m.counts[0][k]);
      CHECK(std::abs(static_cast<double>(test) - 0.2 * n) <= 1.0);
      CHECK(std::abs(static_cast<double>(val) - 0.15 * (n - static_cast<double>(test))) <= 1.0);
      CHECK(train + val + test == sizes[k]);
    }
  }
}

TEST_CASE("extract_patch") {
  const Index h = 60, w = 70;
  std::vector<float> image(static_cast<std::size_t>(kChannels * h * w));
  for (std::size_t i = 0; i < image.size(); ++i) image[i] = static_cast<float>(i + 1);
  auto pixel = [&](Index c, Index r, Index col) -> float {
    if (r < 0 || r >= h || col < 0 || col >= w) return 0.f;
    return image[static_cast<std::size_t>((c * h + r) * w + col)];
  };

  SUBCASE("interior crop equals the oracle slice") {
    const int x = 33, y = 29;
    const auto p = extract_patch(image, h, w, x, y);
    REQUIRE(p.size() == static_cast<std::size_t>(kPatchValues));
    bool same = true;
    for (Index c = 0; c < kChannels; ++c)
      for (Index r = 0; r < kPatchSize; ++r)
        for (Index col = 0; col < kPatchSize; ++col)
          same = same && p[static_cast<std::size_t>((c * kPatchSize + r) * kPatchSize + col)] ==
                             pixel(c, y - 24 + r, x - 24 + col);
    CHECK(same);
  }
  SUBCASE("corner centre zero-pads three quadrants") {
    const auto p = extract_patch(image, h, w, 0, 0);
    for (Index c = 0; c < kChannels; ++c)
      for (Index r = 0; r < kPatchSize; ++r)
        for (Index col = 0; col < kPatchSize; ++col) {
          const float v = p[static_cast<std::size_t>((c * kPatchSize + r) * kPatchSize + col)];
          if (r < 24 || col < 24) {
            CHECK(v == 0.f);
          } else {
            CHECK(v == pixel(c, r - 24, col - 24));
          }
        }
  }
  SUBCASE("fully outside gives zeros; shape is fixed") {
    const auto p = extract_patch(image, h, w, -200, 500);
    CHECK(p.size() == static_cast<std::size_t>(kPatchValues));
    CHECK(max_abs(p) == 0.0);
  }
  SUBCASE("wrong image size") {
    CHECK_THROWS_AS(extract_patch(image, h, w + 1, 0, 0), Error);
  }
}

TEST_CASE("synthetic cohort bookkeeping and determinism") {
  const auto g = small_config(0.5);
  const auto a = generate_synthetic_dataset(g, 17);
  const auto b = generate_synthetic_dataset(g, 17);
  REQUIRE(a.raw.size() == a.cells.size());
  CHECK(a.raw == b.raw);
  CHECK(a.detections == b.detections);
  CHECK(generate_synthetic_dataset(g, 18).raw != a.raw);

  std::array<int, kPhenotypes> per_class{};
  int excluded = 0;
  for (const auto& c : a.cells) {
    if (c.phenotype) ++per_class[static_cast<std::size_t>(*c.phenotype)];
    else ++excluded;
  }
  for (int n : per_class) CHECK(n == 48);  // 40 × 1.2
  CHECK(excluded == 15);                   // 288 · 0.05 / 0.95

  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    const auto& det = a.detections[i];
    const auto& raw = a.raw[i];
    CHECK(det.cell_id == a.cells[i].cell_id);
    for (int c = 0; c < kChannels; ++c) {
      const auto begin = raw.begin() + c * kPatchPixels;
      CHECK(det.max[c] == *std::max_element(begin, begin + kPatchPixels));
      CHECK(det.max[c] >= 0.f);
      CHECK(det.max[c] <= a.slides[static_cast<std::size_t>(det.slide_id)].max[c]);
    }
    CHECK(det.panck_cytoplasm_mean >= 0.f);
    CHECK_FALSE(det.positive[DAPI]);
    for (float v : raw) {
      if (v < 0.f) FAIL("negative intensity");
    }
  }
  for (const auto& s : a.slides) {
    for (float m : s.max) CHECK(m > 0.f);
  }

  // Streaming renders match the all-at-once generator, in any order and
  // with any number of threads.
  SyntheticCohort cohort(g, 17, 3);
  CHECK(cohort.detections() == a.detections);
  CHECK(cohort.render(101) == a.raw[101]);
  CHECK(cohort.render(3) == a.raw[3]);
}

TEST_CASE("difficulty 0: a brute-force max-channel rule recovers every label") {
  auto g = small_config(0.0);
  g.violation_rate = 0.0;
  const auto data = generate_synthetic_dataset(g, 5);
  // Oracle slide maxima straight from the pixels.
  std::vector<std::array<float, kChannels>> slide_max(static_cast<std::size_t>(g.slides));
  std::vector<std::array<float, kChannels>> cell_max(data.raw.size());
  for (std::size_t i = 0; i < data.raw.size(); ++i) {
    for (int c = 0; c < kChannels; ++c) {
      float m = 0;
      for (Index p = 0; p < kPatchPixels; ++p) m = std::max(m, data.raw[i][static_cast<std::size_t>(c * kPatchPixels + p)]);
      cell_max[i][c] = m;
      auto& s = slide_max[static_cast<std::size_t>(data.cells[i].slide_id)][c];
      s = std::max(s, m);
    }
  }
  int correct = 0, total = 0;
  for (std::size_t i = 0; i < data.raw.size(); ++i) {
    if (!data.cells[i].phenotype) continue;
    std::set<int> bright;
    for (int c = 0; c < DAPI; ++c) {
      const auto s = slide_max[static_cast<std::size_t>(data.cells[i].slide_id)][c];
      if (cell_max[i][c] >= 0.5f && cell_max[i][c] >= 0.5f * s) bright.insert(c);
    }
    std::optional<Phenotype> guess;
    for (int k = 0; k < kPhenotypes; ++k) {
      const auto sig = signature(static_cast<Phenotype>(k));
      if (std::set<int>(sig.begin(), sig.end()) == bright) guess = static_cast<Phenotype>(k);
    }
    correct += guess == data.cells[i].phenotype;
    ++total;
  }
  CHECK(total == 6 * 48);
  CHECK(correct == total);
}

TEST_CASE("generate → clean → assign reproduces the generating labels") {
  for (double difficulty : {0.0, 0.5}) {
    CAPTURE(difficulty);
    auto g = small_config(difficulty);
    g.violation_rate = 0.25;
    SyntheticCohort cohort(g, 99);
    const auto cleaned = clean_labels(cohort.detections(), cohort.slides());
    int correct = 0, total = 0, violations = 0;
    std::size_t j = 0;
    for (const auto& cell : cohort.cells()) {
      const bool kept = j < cleaned.size() && cleaned[j].cell_id == cell.cell_id;
      const auto label = kept ? assign_phenotype(cleaned[j]) : std::nullopt;
      if (kept) ++j;
      if (!cell.phenotype) {
        CHECK(label == std::nullopt);
        continue;
      }
      violations += cell.violation != Violation::none;
      if (cell.violation == Violation::no_positivity) {
        CHECK_FALSE(kept);
        continue;
      }
      ++total;
      correct += label == cell.phenotype;
    }
    CHECK(violations > 30);
    const double accuracy = static_cast<double>(correct) / total;
    if (difficulty == 0.0) {
      CHECK(accuracy == 1.0);
    } else {
      CHECK(accuracy >= 0.95);
    }
  }
}

TEST_CASE("build, save and load a dataset") {
  auto g = small_config(0.5);
  g.cells_per_class = 20;
  const Dataset ds = build_dataset(g, 31);
  REQUIRE(ds.records.size() == 120);
  std::array<int, kPhenotypes> per_class{};
  for (const auto& r : ds.records) {
    ++per_class[static_cast<std::size_t>(r.label)];
    REQUIRE(r.image.size() == static_cast<std::size_t>(kPatchValues));
    for (float v : r.image) {
      if (v < 0.f || v > 1.f) FAIL("pixel outside [0,1]");
    }
  }
  for (int n : per_class) CHECK(n == 20);
  CHECK(ds.count(Split::test) == 24);
  CHECK(ds.count(Split::val) == 12);
  CHECK(ds.count(Split::train) == 84);
  CHECK(std::is_sorted(ds.records.begin(), ds.records.end(),
                       [](const auto& a, const auto& b) { return a.cell_id < b.cell_id; }));

  const auto dir_a = scratch_dir("dataset_a");
  const auto dir_b = scratch_dir("dataset_b");
  save_dataset(ds, dir_a);
  save_dataset(build_dataset(g, 31, 2), dir_b);
  for (const char* f : {"manifest.json", "images.svt", "labels.csv", "detections.csv"}) {
    CAPTURE(f);
    CHECK(slurp(dir_a / f) == slurp(dir_b / f));
  }

  const Dataset back = load_dataset(dir_a);
  REQUIRE(back.records.size() == ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    CHECK(back.records[i].cell_id == ds.records[i].cell_id);
    CHECK(back.records[i].slide_id == ds.records[i].slide_id);
    CHECK(back.records[i].label == ds.records[i].label);
    CHECK(back.records[i].image == ds.records[i].image);
  }
  CHECK(back.split.train == ds.split.train);
  CHECK(back.split.val == ds.split.val);
  CHECK(back.split.test == ds.split.test);
  CHECK(back.split.counts == ds.split.counts);
  CHECK(back.generator == ds.generator);
  CHECK(back.seed == ds.seed);

  const auto idx = back.indices(Split::val);
  const auto images = gather_images(back, idx);
  const auto labels = gather_labels(back, idx);
  CHECK(images.size() == idx.size() * static_cast<std::size_t>(kPatchValues));
  CHECK(labels.size() == idx.size());

  CHECK_THROWS_AS(load_dataset(scratch_dir("missing")), Error);
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}
