#include "subvae/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "subvae/svt.hpp"

namespace subvae {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kValidationStream = 0x7A11DA7E;

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::io, "write failed: " + path.string());
}

Tensor<float> batch_images(const Dataset& ds, std::span<const std::size_t> idx) {
  return Tensor<float>::from_vector(
      {static_cast<Index>(idx.size()), kChannels, kPatchSize, kPatchSize}, gather_images(ds, idx));
}

void accumulate(LossBreakdown& sum, const LossBreakdown& x, double w) {
  sum.recon += w * x.recon;
  sum.kl += w * x.kl;
  sum.classification += w * x.classification;
  sum.total += w * x.total;
}

void scale(LossBreakdown& x, double s) {
  x.recon *= s;
  x.kl *= s;
  x.classification *= s;
  x.total *= s;
}

json loss_json(const LossBreakdown& l) {
  return json{{"recon", l.recon}, {"kl", l.kl}, {"classification", l.classification},
              {"total", l.total}};
}

LossBreakdown loss_from_json(const json& j) {
  return {j.at("recon").get<double>(), j.at("kl").get<double>(),
          j.at("classification").get<double>(), j.at("total").get<double>()};
}

// Fields that must agree for a resumed run to continue the same trajectory.
json trajectory_json(const TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
              {"alpha", c.alpha},                 {"seed", c.seed},
              {"optimizer", to_string(c.optimizer)}, {"beta1", c.beta1},
              {"beta2", c.beta2},                 {"adam_epsilon", c.adam_epsilon}};
}

void save_state(const std::filesystem::path& dir, ModelBundle<float>& bundle,
                const OptimizerState& state, const TrainTrace& trace, const TrainConfig& cfg) {
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir / "optimizer");
  save_checkpoint(bundle, dir / "model", static_cast<std::uint64_t>(trace.epochs.size()));
  const auto params = bundle.parameters();
  for (std::size_t i = 0; i < params.size() && i < state.m.size(); ++i) {
    const Shape shape = params[i].tensor.shape();
    write_svt(dir / "optimizer" / (params[i].name + ".m.svt"), shape, state.m[i]);
    write_svt(dir / "optimizer" / (params[i].name + ".v.svt"), shape, state.v[i]);
  }
  json j;
  j["config"] = trajectory_json(cfg);
  j["step"] = state.step;
  j["best_epoch"] = trace.best_epoch;
  j["epochs"] = json::array();
  for (const auto& e : trace.epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train", loss_json(e.train)},
                           {"val", loss_json(e.val)},
                           {"seconds", e.seconds}});
  }
  write_text(dir / "train_state.json", j.dump(2) + "\n");
}

}  // namespace

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "adam") return OptimizerKind::adam;
  if (text == "sgd") return OptimizerKind::sgd;
  throw Error(ErrorKind::config, "unknown optimizer '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::config, m); };
  if (!(learning_rate > 0)) fail("train.learning_rate must be > 0");
  if (batch_size < 2) fail("train.batch_size must be >= 2");
  if (epochs < 1) fail("train.epochs must be >= 1");
  if (!(alpha >= 0)) fail("train.alpha must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("train betas must be in [0,1)");
  if (!(adam_epsilon > 0)) fail("train.adam_epsilon must be > 0");
  if (checkpoint_every < 0) fail("train.checkpoint_every must be >= 0");
}

void adam_step(std::span<Parameter<float>> params, OptimizerState& state, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (auto& p : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.f);
      state.v.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.f);
    }
  }
  if (state.m.size() != params.size()) {
    throw Error(ErrorKind::shape, "optimizer state holds " + std::to_string(state.m.size()) +
                                      " tensors for " + std::to_string(params.size()) +
                                      " parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(cfg.beta1, t)));
  const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
  const float lr = static_cast<float>(cfg.learning_rate);
  const float eps = static_cast<float>(cfg.adam_epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<float>& p = params[i].tensor;
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != static_cast<std::size_t>(p.numel())) {
      throw Error(ErrorKind::shape, "optimizer state mismatch for " + params[i].name);
    }
    float* w = p.ptr();
    const std::span<const float> g = std::as_const(p).grad();
    const bool has_grad = p.has_grad();
    for (std::size_t j = 0; j < m.size(); ++j) {
      const float gj = has_grad ? g[j] : 0.f;
      m[j] = b1 * m[j] + (1.f - b1) * gj;
      v[j] = b2 * v[j] + (1.f - b2) * gj * gj;
      w[j] -= lr * (m[j] * c1) / (std::sqrt(v[j] * c2) + eps);
    }
  }
}

void sgd_step(std::span<Parameter<float>> params, const TrainConfig& cfg) {
  const float lr = static_cast<float>(cfg.learning_rate);
  for (auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    float* w = p.tensor.ptr();
    const auto g = std::as_const(p.tensor).grad();
    for (std::size_t j = 0; j < g.size(); ++j) w[j] -= lr * g[j];
  }
}

void optimizer_step(std::span<Parameter<float>> params, OptimizerState& state,
                    const TrainConfig& cfg) {
  if (cfg.optimizer == OptimizerKind::adam) {
    adam_step(params, state, cfg);
  } else {
    sgd_step(params, cfg);
    ++state.step;
  }
}

std::string TrainTrace::csv(bool wall_clock) const {
  std::string out = "epoch,recon,kl,classification,total,val_total,seconds\n";
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch) + "," + fmt_num(e.train.recon) + "," + fmt_num(e.train.kl) +
           "," + fmt_num(e.train.classification) + "," + fmt_num(e.train.total) + "," +
           fmt_num(e.val.total) + "," + (wall_clock ? fmt_num(e.seconds) : std::string("0")) +
           "\n";
  }
  return out;
}

LossBreakdown train_epoch(ModelBundle<float>& bundle, const Dataset& dataset,
                          std::span<const std::size_t> indices, const TrainConfig& cfg,
                          Index epoch, OptimizerState& state,
                          std::vector<LossBreakdown>* batch_losses) {
  if (indices.size() < 2) throw Error(ErrorKind::data, "training split has fewer than 2 records");
  std::vector<std::size_t> order(indices.begin(), indices.end());
  std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);

  auto params = bundle.parameters();
  LossBreakdown sum;
  Index batches = 0;
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    if (end - start < 2) break;
    const std::span<const std::size_t> idx(order.data() + start, end - start);
    const Tensor<float> x = batch_images(dataset, idx);
    const std::vector<int> labels = gather_labels(dataset, idx);

    clear_tape<float>();
    bundle.zero_grad();
    LossTerms<float> terms = total_loss(bundle, x, labels, Mode::train, rng);
    backward(terms.total);
    optimizer_step(params, state, cfg);
    clear_tape<float>();

    const LossBreakdown l = terms.values();
    if (!std::isfinite(l.total)) {
      throw Error(ErrorKind::data, "non-finite loss at epoch " + std::to_string(epoch));
    }
    if (batch_losses) batch_losses->push_back(l);
    accumulate(sum, l, 1.0);
    ++batches;
  }
  scale(sum, 1.0 / static_cast<double>(batches));
  return sum;
}

LossBreakdown evaluate_loss(ModelBundle<float>& bundle, const Dataset& dataset,
                            std::span<const std::size_t> indices, const TrainConfig& cfg) {
  if (indices.empty()) throw Error(ErrorKind::data, "cannot evaluate an empty split");
  NoGradGuard no_grad;
  std::mt19937_64 rng(mix_seed(cfg.seed, kValidationStream));
  LossBreakdown sum;
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t start = 0; start < indices.size(); start += bs) {
    const std::size_t end = std::min(indices.size(), start + bs);
    const auto idx = indices.subspan(start, end - start);
    const Tensor<float> x = batch_images(dataset, idx);
    const std::vector<int> labels = gather_labels(dataset, idx);
    const LossTerms<float> terms = total_loss(bundle, x, labels, Mode::eval, rng);
    accumulate(sum, terms.values(), static_cast<double>(idx.size()));
  }
  scale(sum, 1.0 / static_cast<double>(indices.size()));
  return sum;
}

FitResult fit(ModelBundle<float> bundle, const Dataset& dataset, const TrainConfig& cfg,
              const FitOptions& options) {
  cfg.validate();
  bundle.set_alpha(cfg.alpha);
  const auto train_idx = dataset.indices(Split::train);
  const auto val_idx = dataset.indices(Split::val);
  if (train_idx.size() < 2) throw Error(ErrorKind::data, "training split has fewer than 2 records");
  if (val_idx.empty()) throw Error(ErrorKind::data, "validation split is empty");

  OptimizerState state;
  TrainTrace trace;
  ModelBundle<float> best;
  double best_val = 0;
  const auto& out = options.out_dir;
  const bool resuming = options.resume && out && std::filesystem::exists(*out / "checkpoint" / "train_state.json");

  if (resuming) {
    const auto dir = *out / "checkpoint";
    std::ifstream in(dir / "train_state.json");
    json j;
    try {
      j = json::parse(in);
      if (j.at("config") != trajectory_json(cfg)) {
        throw Error(ErrorKind::config, "checkpoint in " + dir.string() +
                                           " was written with a different training config");
      }
      state.step = j.at("step").get<std::int64_t>();
      trace.best_epoch = j.at("best_epoch").get<Index>();
      for (const auto& e : j.at("epochs")) {
        trace.epochs.push_back({e.at("epoch").get<Index>(), loss_from_json(e.at("train")),
                                loss_from_json(e.at("val")), e.at("seconds").get<double>()});
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::data, "malformed train state: " + std::string(e.what()));
    }
    ModelBundle<float> saved = load_checkpoint(dir / "model");
    bundle.copy_from(saved);
    for (const auto& p : bundle.parameters()) {
      const auto m = read_svt(dir / "optimizer" / (p.name + ".m.svt"));
      const auto v = read_svt(dir / "optimizer" / (p.name + ".v.svt"));
      state.m.push_back(m.values);
      state.v.push_back(v.values);
    }
    if (cfg.optimizer == OptimizerKind::sgd) {
      state.m.clear();
      state.v.clear();
    }
    best = load_checkpoint(*out / "best");
    best.set_alpha(cfg.alpha);
    best_val = trace.epochs.at(static_cast<std::size_t>(trace.best_epoch - 1)).val.total;
  } else if (options.init_output_bias) {
    const auto images = gather_images(dataset, train_idx);
    initialize_output_bias(bundle, images, static_cast<Index>(train_idx.size()));
  }

  if (out) std::filesystem::create_directories(*out);
  for (Index epoch = static_cast<Index>(trace.epochs.size()) + 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train = train_epoch(bundle, dataset, train_idx, cfg, epoch, state);
    rec.val = evaluate_loss(bundle, dataset, val_idx, cfg);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    trace.epochs.push_back(rec);
    if (trace.best_epoch == 0 || rec.val.total < best_val) {
      best_val = rec.val.total;
      trace.best_epoch = epoch;
      best = bundle.clone();
    }
    if (options.on_epoch) options.on_epoch(rec);
    const bool last = epoch == cfg.epochs;
    if (out && (last || (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0))) {
      save_state(*out / "checkpoint", bundle, state, trace, cfg);
      save_checkpoint(best, *out / "best", static_cast<std::uint64_t>(trace.best_epoch));
    }
  }

  if (out) {
    write_text(*out / "trace.csv", trace.csv(cfg.record_wall_clock));
    std::string timing = "epoch,seconds\n";
    for (const auto& e : trace.epochs) timing += std::to_string(e.epoch) + "," + fmt_num(e.seconds) + "\n";
    write_text(*out / "timing.csv", timing);
  }
  return {std::move(best), std::move(trace)};
}

}  // namespace subvae
