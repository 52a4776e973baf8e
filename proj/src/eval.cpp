#include "subvae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

namespace subvae {

namespace {

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

Tensor<float> rows_tensor(const EmbeddingSet& set, std::span<const std::size_t> rows) {
  std::vector<float> values;
  values.reserve(rows.size() * static_cast<std::size_t>(set.dim));
  for (std::size_t r : rows) {
    const auto begin = set.values.begin() + static_cast<std::ptrdiff_t>(r * static_cast<std::size_t>(set.dim));
    values.insert(values.end(), begin, begin + set.dim);
  }
  return Tensor<float>::from_vector({static_cast<Index>(rows.size()), set.dim}, std::move(values));
}

}  // namespace

std::string method_name(Variant v, const LatentConfig& latent) {
  if (v == Variant::proposed) return to_string(v) + "@" + latent.proportion.str();
  return to_string(v);
}

EmbeddingSet export_embeddings(ModelBundle<float>& bundle, const Dataset& dataset,
                               std::span<const std::size_t> indices) {
  EmbeddingSet set;
  set.method = to_string(bundle.variant());
  set.dim = bundle.embedding_dim();
  set.values.reserve(indices.size() * static_cast<std::size_t>(set.dim));
  constexpr std::size_t kBatch = 64;
  for (std::size_t start = 0; start < indices.size(); start += kBatch) {
    const auto idx = indices.subspan(start, std::min(kBatch, indices.size() - start));
    const auto x = Tensor<float>::from_vector(
        {static_cast<Index>(idx.size()), kChannels, kPatchSize, kPatchSize},
        gather_images(dataset, idx));
    const Tensor<float> e = embed(bundle, x);
    if (e.dim(1) != set.dim) throw Error(ErrorKind::shape, "embedding width mismatch");
    set.values.insert(set.values.end(), e.data().begin(), e.data().end());
    for (std::size_t i : idx) {
      set.ids.push_back(dataset.records[i].cell_id);
      set.labels.push_back(static_cast<int>(dataset.records[i].label));
    }
  }
  return set;
}

std::vector<int> Probe::predict(const EmbeddingSet& set) {
  if (set.dim != net.input_dim) {
    throw Error(ErrorKind::shape, "probe expects " + std::to_string(net.input_dim) +
                                      "-dim embeddings, got " + std::to_string(set.dim));
  }
  NoGradGuard no_grad;
  std::vector<std::size_t> rows(set.ids.size());
  std::iota(rows.begin(), rows.end(), 0);
  const Tensor<float> logits = net.forward(rows_tensor(set, rows), Mode::eval, arch);
  std::vector<int> out;
  out.reserve(rows.size());
  const Index k = logits.dim(1);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const float* row = logits.ptr() + static_cast<Index>(r) * k;
    out.push_back(static_cast<int>(std::max_element(row, row + k) - row));
  }
  return out;
}

Probe train_probe(const EmbeddingSet& train, const ProbeConfig& cfg, const Architecture& arch) {
  std::array<bool, kPhenotypes> seen{};
  for (int y : train.labels) {
    if (y < 0 || y >= kPhenotypes) throw Error(ErrorKind::data, "probe label out of range");
    seen[static_cast<std::size_t>(y)] = true;
  }
  for (int k = 0; k < kPhenotypes; ++k) {
    if (!seen[static_cast<std::size_t>(k)]) {
      throw Error(ErrorKind::data, "probe training set has no " +
                                       std::string(to_string(static_cast<Phenotype>(k))) +
                                       " examples");
    }
  }
  if (cfg.batch_size < 2 || cfg.epochs < 1 || !(cfg.learning_rate > 0)) {
    throw Error(ErrorKind::config, "invalid probe configuration");
  }

  Probe probe{Classifier<float>::create(train.dim, arch), arch};
  probe.net.initialize(cfg.seed, "probe", arch);
  std::vector<Parameter<float>> params;
  probe.net.visit_parameters("probe", [&](const std::string& name, Tensor<float>& t) {
    params.push_back({name, t});
  });
  TrainConfig opt;
  opt.learning_rate = cfg.learning_rate;
  OptimizerState state;

  std::vector<std::size_t> order(train.ids.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      if (end - start < 2) break;
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      std::vector<int> labels;
      for (std::size_t r : rows) labels.push_back(train.labels[r]);
      clear_tape<float>();
      for (auto& p : params) p.tensor.zero_grad();
      const Tensor<float> loss =
          softmax_cross_entropy(probe.net.forward(rows_tensor(train, rows), Mode::train, arch), labels);
      backward(loss);
      adam_step(params, state, opt);
    }
  }
  clear_tape<float>();
  return probe;
}

MetricsReport compute_metrics(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw Error(ErrorKind::shape, "compute_metrics: " + std::to_string(predictions.size()) +
                                      " predictions for " + std::to_string(labels.size()) +
                                      " labels");
  }
  MetricsReport m;
  m.n = static_cast<Index>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || y >= kPhenotypes || p < 0 || p >= kPhenotypes) {
      throw Error(ErrorKind::precondition, "class index out of range");
    }
    ++m.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
  }
  Index diag = 0;
  for (int k = 0; k < kPhenotypes; ++k) {
    const std::size_t kk = static_cast<std::size_t>(k);
    Index row = 0, col = 0;
    for (int j = 0; j < kPhenotypes; ++j) {
      row += m.confusion[kk][static_cast<std::size_t>(j)];
      col += m.confusion[static_cast<std::size_t>(j)][kk];
    }
    const Index tp = m.confusion[kk][kk];
    diag += tp;
    m.precision += col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    m.recall += row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
  }
  m.precision /= kPhenotypes;
  m.recall /= kPhenotypes;
  m.accuracy = m.n ? static_cast<double>(diag) / static_cast<double>(m.n) : 0.0;
  return m;
}

MetricsReport evaluate_bundle(ModelBundle<float>& bundle, const Dataset& dataset,
                              const ProbeConfig& probe_cfg, bool shuffle_labels) {
  EmbeddingSet train = export_embeddings(bundle, dataset, dataset.indices(Split::train));
  EmbeddingSet test = export_embeddings(bundle, dataset, dataset.indices(Split::test));
  if (shuffle_labels) {
    std::mt19937_64 rng(mix_seed(probe_cfg.seed, 0x5u));
    std::shuffle(train.labels.begin(), train.labels.end(), rng);
  }
  Probe probe = train_probe(train, probe_cfg, bundle.arch());
  const auto predictions = probe.predict(test);
  return compute_metrics(predictions, test.labels);
}

MethodResult run_method(const Dataset& dataset, const ExperimentConfig& cfg, Variant variant,
                        const LatentConfig& latent,
                        const std::optional<std::filesystem::path>& out_dir,
                        const EpochCallback& on_epoch) {
  MethodResult result;
  result.method = method_name(variant, latent);
  result.variant = variant;
  result.latent = latent;
  auto bundle = ModelBundle<float>::create(variant, latent, cfg.train.alpha, cfg.model_seed, cfg.arch);
  FitOptions options;
  options.out_dir = out_dir;
  if (on_epoch) {
    options.on_epoch = [&](const EpochRecord& e) { on_epoch(result.method, e); };
  }
  FitResult fitted = fit(std::move(bundle), dataset, cfg.train, options);
  result.trace = std::move(fitted.trace);
  result.embedding_size = fitted.bundle.embedding_dim();
  result.metrics = evaluate_bundle(fitted.bundle, dataset, cfg.probe);
  return result;
}

std::vector<MethodResult> compare_variants(const Dataset& dataset, const ExperimentConfig& cfg,
                                           std::span<const Variant> variants,
                                           const std::optional<std::filesystem::path>& out_dir,
                                           const EpochCallback& on_epoch) {
  std::vector<MethodResult> rows;
  for (Variant v : variants) {
    std::optional<std::filesystem::path> dir;
    if (out_dir) dir = *out_dir / to_string(v);
    rows.push_back(run_method(dataset, cfg, v, cfg.latent, dir, on_epoch));
  }
  return rows;
}

std::vector<MethodResult> sweep_subspace(const Dataset& dataset, const ExperimentConfig& cfg,
                                         std::span<const Proportion> proportions,
                                         const std::optional<std::filesystem::path>& out_dir,
                                         const EpochCallback& on_epoch) {
  std::vector<MethodResult> rows;
  for (const Proportion& p : proportions) {
    LatentConfig latent{cfg.latent.z_dim, p};
    latent.validate();
    std::optional<std::filesystem::path> dir;
    if (out_dir) {
      std::string tag = p.str();
      std::replace(tag.begin(), tag.end(), '/', '_');
      dir = *out_dir / ("proposed_" + tag);
    }
    rows.push_back(run_method(dataset, cfg, Variant::proposed, latent, dir, on_epoch));
  }
  return rows;
}

std::string report_csv(std::span<const MethodResult> rows) {
  std::string out = "method,embedding_size,accuracy,precision,recall\n";
  for (const auto& r : rows) {
    out += r.method + "," + std::to_string(r.embedding_size) + "," + fmt_num(r.metrics.accuracy) +
           "," + fmt_num(r.metrics.precision) + "," + fmt_num(r.metrics.recall) + "\n";
  }
  return out;
}

std::string sweep_csv(std::span<const MethodResult> rows) {
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rows[a].metrics.accuracy > rows[b].metrics.accuracy;
  });
  std::vector<std::size_t> rank(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i + 1;
  std::string out = "proportion,embedding_size,accuracy,precision,recall,rank\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out += r.latent.proportion.str() + "," + std::to_string(r.embedding_size) + "," +
           fmt_num(r.metrics.accuracy) + "," + fmt_num(r.metrics.precision) + "," +
           fmt_num(r.metrics.recall) + "," + std::to_string(rank[i]) + "\n";
  }
  return out;
}

std::string confusion_csv(std::span<const MethodResult> rows) {
  std::string out = "method,true_label";
  for (int k = 0; k < kPhenotypes; ++k) out += "," + std::string(to_string(static_cast<Phenotype>(k)));
  out += "\n";
  for (const auto& r : rows) {
    for (int k = 0; k < kPhenotypes; ++k) {
      out += r.method + "," + std::string(to_string(static_cast<Phenotype>(k)));
      for (Index c : r.metrics.confusion[static_cast<std::size_t>(k)]) out += "," + std::to_string(c);
      out += "\n";
    }
  }
  return out;
}

unsigned char to_gray(float value) {
  const float v = std::clamp(value, 0.f, 1.f);
  return static_cast<unsigned char>(std::lround(255.f * v));
}

std::vector<std::filesystem::path> dump_reconstructions(ModelBundle<float>& bundle,
                                                        const Dataset& dataset,
                                                        std::span<const std::size_t> indices,
                                                        Index n,
                                                        const std::filesystem::path& dir) {
  if (n < 0 || n > static_cast<Index>(indices.size())) {
    throw Error(ErrorKind::precondition, "asked for " + std::to_string(n) +
                                             " reconstructions from " +
                                             std::to_string(indices.size()) + " records");
  }
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  if (n == 0) return written;
  const auto idx = indices.first(static_cast<std::size_t>(n));
  const auto x = Tensor<float>::from_vector({n, kChannels, kPatchSize, kPatchSize},
                                            gather_images(dataset, idx));
  Tensor<float> recon;
  {
    NoGradGuard no_grad;
    const EncoderOutput<float> enc = encode(bundle, x, Mode::eval);
    recon = sigmoid(decode(bundle, enc.mu, Mode::eval));
  }
  constexpr Index kWidth = 2 * kPatchSize;
  std::string pixels(static_cast<std::size_t>(kWidth * kPatchSize), '\0');
  for (Index s = 0; s < n; ++s) {
    const std::int64_t id = dataset.records[idx[static_cast<std::size_t>(s)]].cell_id;
    for (Index c = 0; c < kChannels; ++c) {
      const float* in = x.ptr() + (s * kChannels + c) * kPatchPixels;
      const float* out = recon.ptr() + (s * kChannels + c) * kPatchPixels;
      for (Index r = 0; r < kPatchSize; ++r) {
        for (Index col = 0; col < kPatchSize; ++col) {
          pixels[static_cast<std::size_t>(r * kWidth + col)] = static_cast<char>(to_gray(in[r * kPatchSize + col]));
          pixels[static_cast<std::size_t>(r * kWidth + kPatchSize + col)] = static_cast<char>(to_gray(out[r * kPatchSize + col]));
        }
      }
      const auto path = dir / ("cell" + std::to_string(id) + "_" + std::string(channel_name(static_cast<int>(c))) + ".pgm");
      std::ofstream f(path, std::ios::binary | std::ios::trunc);
      if (!f) throw Error(ErrorKind::io, "cannot write " + path.string());
      f << "P5\n" << kWidth << " " << kPatchSize << "\n255\n";
      f.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
      if (!f) throw Error(ErrorKind::io, "write failed: " + path.string());
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace subvae
