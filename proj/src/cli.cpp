#include "subvae/cli.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "json_io.hpp"

namespace subvae {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_error(const std::string& message) { throw Error(ErrorKind::config, message); }

// Reads the keys of one JSON object and rejects anything left unread.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_error(path_ + " must be an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (const json* v = find(key)) {
      try {
        if constexpr (std::is_same_v<T, std::uint64_t>) {
          if (!v->is_number_unsigned()) config_error(where(key) + " must be a nonnegative integer");
        } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
          if (!v->is_number_integer()) config_error(where(key) + " must be an integer");
        }
        out = v->get<T>();
      } catch (const json::exception&) {
        config_error(where(key) + " has the wrong type");
      }
    }
  }

  template <typename F>
  void read_string(const std::string& key, F&& apply) {
    if (const json* v = find(key)) {
      if (!v->is_string()) config_error(where(key) + " must be a string");
      apply(v->get<std::string>());
    }
  }

  template <typename F>
  void read_strings(const std::string& key, F&& apply) {
    if (const json* v = find(key)) {
      if (!v->is_array()) config_error(where(key) + " must be an array of strings");
      for (const auto& item : *v) {
        if (!item.is_string()) config_error(where(key) + " must be an array of strings");
        apply(item.get<std::string>());
      }
    }
  }

  std::optional<Section> child(const std::string& key) {
    if (const json* v = find(key)) return Section(*v, where(key));
    return std::nullopt;
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) config_error("unknown key " + where(item.key()));
    }
  }

 private:
  std::string where(const std::string& key) const { return path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_generator(Section s, GeneratorConfig& g) {
  s.read("slides", g.slides);
  s.read("cells_per_class", g.cells_per_class);
  s.read("oversample", g.oversample);
  s.read("excluded_fraction", g.excluded_fraction);
  s.read("noise", g.noise);
  s.read("difficulty", g.difficulty);
  s.read("violation_rate", g.violation_rate);
  s.read("min_slide_max", g.min_slide_max);
  s.read("max_slide_max", g.max_slide_max);
  s.finish();
}

json to_json(const RunConfig& c) {
  json variants = json::array();
  for (Variant v : c.eval.variants) variants.push_back(to_string(v));
  json proportions = json::array();
  for (const Proportion& p : c.eval.proportions) proportions.push_back(p.str());
  return json{
      {"seed", c.seed},
      {"output", c.output.generic_string()},
      {"data",
       {{"dataset", c.data.dataset.generic_string()},
        {"seed", c.data_seed()},
        {"generator", detail::generator_json(c.data.generator)}}},
      {"model",
       {{"variant", to_string(c.model.variant)},
        {"z_dim", c.model.latent.z_dim},
        {"proportion", c.model.latent.proportion.str()},
        {"alpha", c.model.alpha},
        {"architecture", detail::architecture_json(c.model.arch)}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"optimizer", to_string(c.train.optimizer)},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"adam_epsilon", c.train.adam_epsilon},
        {"checkpoint_every", c.train.checkpoint_every},
        {"record_wall_clock", c.train.record_wall_clock}}},
      {"eval",
       {{"probe",
         {{"epochs", c.eval.probe.epochs},
          {"learning_rate", c.eval.probe.learning_rate},
          {"batch_size", c.eval.probe.batch_size}}},
        {"variants", variants},
        {"proportions", proportions},
        {"reconstructions", c.eval.reconstructions},
        {"shuffle_labels", c.eval.shuffle_labels}}}};
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
}

Dataset obtain_dataset(const CommandContext& ctx) {
  const RunConfig& c = ctx.config;
  if (!c.data.dataset.empty()) {
    if (ctx.log) ctx.log("loading dataset " + c.data.dataset.string());
    return load_dataset(c.data.dataset);
  }
  if (ctx.log) ctx.log("generating dataset in memory (seed " + std::to_string(c.data_seed()) + ")");
  return build_dataset(c.data.generator, c.data_seed(), ctx.threads);
}

void write_run_files(const CommandContext& ctx, const std::string& command, std::vector<std::string>& artifacts,
                     const json& extra = json::object()) {
  write_text(ctx.out_dir / "config.json", run_config_json(ctx.config));
  artifacts.push_back("config.json");
  json meta{{"command", command},
            {"seed", ctx.config.seed},
            {"data_seed", ctx.config.data_seed()},
            {"config_hash", config_hash(ctx.config)},
            {"threads", ctx.threads},
            {"dataset", ctx.config.data.dataset.empty() ? std::string("generated")
                                                        : ctx.config.data.dataset.generic_string()}};
  meta.update(extra);
  json list = artifacts;
  list.push_back("metadata.json");
  meta["artifacts"] = list;
  write_text(ctx.out_dir / "metadata.json", meta.dump(2) + "\n");
  artifacts.push_back("metadata.json");
}

json metrics_json(const MethodResult& r) {
  json confusion = json::array();
  for (const auto& row : r.metrics.confusion) confusion.push_back(row);
  return json{{"method", r.method},
              {"variant", to_string(r.variant)},
              {"z_dim", r.latent.z_dim},
              {"proportion", r.latent.proportion.str()},
              {"embedding_size", r.embedding_size},
              {"accuracy", r.metrics.accuracy},
              {"precision", r.metrics.precision},
              {"recall", r.metrics.recall},
              {"n", r.metrics.n},
              {"confusion", confusion}};
}

EpochCallback epoch_logger(const LogFn& log) {
  if (!log) return {};
  return [log](const std::string& method, const EpochRecord& e) {
    char line[160];
    std::snprintf(line, sizeof line, "%s epoch %lld  train %.4f  val %.4f", method.c_str(),
                  static_cast<long long>(e.epoch), e.train.total, e.val.total);
    log(line);
  };
}

}  // namespace

ExperimentConfig RunConfig::experiment() const {
  ExperimentConfig e;
  e.latent = model.latent;
  e.arch = model.arch;
  e.train = train;
  e.train.alpha = model.alpha;
  e.train.seed = seed;
  e.probe = eval.probe;
  e.probe.seed = seed;
  e.model_seed = seed;
  return e;
}

void RunConfig::validate() const {
  data.generator.validate();
  model.latent.validate();
  if (!(model.alpha >= 0)) config_error("model.alpha must be nonnegative");
  if (!(model.arch == Architecture{})) config_error("model.architecture must match the reference architecture");
  experiment().train.validate();
  if (eval.probe.epochs < 1 || eval.probe.batch_size < 2 || !(eval.probe.learning_rate > 0)) {
    config_error("eval.probe needs epochs >= 1, batch_size >= 2 and learning_rate > 0");
  }
  if (eval.reconstructions < 0) config_error("eval.reconstructions must be nonnegative");
  for (const Proportion& p : eval.proportions) LatentConfig{model.latent.z_dim, p}.validate();
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section s(root, "config");
  s.read("seed", c.seed);
  s.read_string("output", [&](const std::string& v) { c.output = v; });
  if (auto d = s.child("data")) {
    d->read_string("dataset", [&](const std::string& v) { c.data.dataset = v; });
    if (d->find("seed")) {
      std::uint64_t seed = 0;
      d->read("seed", seed);
      c.data.seed = seed;
    }
    if (auto g = d->child("generator")) read_generator(*g, c.data.generator);
    d->finish();
  }
  if (auto m = s.child("model")) {
    m->read_string("variant", [&](const std::string& v) { c.model.variant = parse_variant(v); });
    m->read("z_dim", c.model.latent.z_dim);
    m->read_string("proportion", [&](const std::string& v) { c.model.latent.proportion = Proportion::parse(v); });
    m->read("alpha", c.model.alpha);
    if (const json* a = m->find("architecture")) {
      if (*a != detail::architecture_json(Architecture{})) {
        config_error("config.model.architecture must match the reference architecture");
      }
    }
    m->finish();
  }
  if (auto t = s.child("train")) {
    t->read("learning_rate", c.train.learning_rate);
    t->read("epochs", c.train.epochs);
    t->read("batch_size", c.train.batch_size);
    t->read_string("optimizer", [&](const std::string& v) { c.train.optimizer = parse_optimizer(v); });
    t->read("beta1", c.train.beta1);
    t->read("beta2", c.train.beta2);
    t->read("adam_epsilon", c.train.adam_epsilon);
    t->read("checkpoint_every", c.train.checkpoint_every);
    t->read("record_wall_clock", c.train.record_wall_clock);
    t->finish();
  }
  if (auto e = s.child("eval")) {
    if (auto p = e->child("probe")) {
      p->read("epochs", c.eval.probe.epochs);
      p->read("learning_rate", c.eval.probe.learning_rate);
      p->read("batch_size", c.eval.probe.batch_size);
      p->finish();
    }
    if (e->find("variants")) {
      c.eval.variants.clear();
      e->read_strings("variants", [&](const std::string& v) { c.eval.variants.push_back(parse_variant(v)); });
    }
    e->read_strings("proportions", [&](const std::string& v) { c.eval.proportions.push_back(Proportion::parse(v)); });
    e->read("reconstructions", c.eval.reconstructions);
    e->read("shuffle_labels", c.eval.shuffle_labels);
    e->finish();
  }
  s.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

std::string git_blob_id(std::string_view text) {
  std::string blob = "blob " + std::to_string(text.size());
  blob.push_back('\0');
  blob.append(text);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw Error(ErrorKind::precondition, "SHA-1 digest failed");
  }
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", digest[i]);
    hex += byte;
  }
  return hex;
}

std::string config_hash(const RunConfig& cfg) { return git_blob_id(run_config_json(cfg)); }

std::vector<std::string> cmd_generate(const CommandContext& ctx) {
  const RunConfig& c = ctx.config;
  if (ctx.log) ctx.log("generating " + std::to_string(c.data.generator.cells_per_class) + " cells per class");
  const Dataset ds = build_dataset(c.data.generator, c.data_seed(), ctx.threads);
  save_dataset(ds, ctx.out_dir);
  std::vector<std::string> artifacts{"manifest.json", "images.svt", "labels.csv", "detections.csv"};
  json counts = json::object();
  for (Split s : {Split::train, Split::val, Split::test}) counts[std::string(to_string(s))] = ds.count(s);
  write_run_files(ctx, "generate", artifacts, {{"records", ds.records.size()}, {"split_counts", counts}});
  return artifacts;
}

std::vector<std::string> cmd_train(const CommandContext& ctx) {
  const RunConfig& c = ctx.config;
  const Dataset ds = obtain_dataset(ctx);
  const ExperimentConfig e = c.experiment();
  auto bundle = ModelBundle<float>::create(c.model.variant, c.model.latent, c.model.alpha, e.model_seed, c.model.arch);
  FitOptions options;
  options.out_dir = ctx.out_dir;
  if (auto log = epoch_logger(ctx.log)) {
    const std::string name = method_name(c.model.variant, c.model.latent);
    options.on_epoch = [log, name](const EpochRecord& r) { log(name, r); };
  }
  const FitResult fitted = fit(std::move(bundle), ds, e.train, options);
  std::vector<std::string> artifacts{"checkpoint/model/manifest.json", "checkpoint/train_state.json", "best/manifest.json", "trace.csv", "timing.csv"};
  write_run_files(ctx, "train", artifacts,
                  {{"best_epoch", fitted.trace.best_epoch}, {"method", method_name(c.model.variant, c.model.latent)}});
  return artifacts;
}

std::vector<std::string> cmd_eval(const CommandContext& ctx, const fs::path& checkpoint) {
  const RunConfig& c = ctx.config;
  const Dataset ds = obtain_dataset(ctx);
  auto bundle = load_checkpoint(checkpoint);
  if (bundle.arch().channels != kChannels || bundle.arch().image_size != kPatchSize) {
    throw Error(ErrorKind::config, "checkpoint " + checkpoint.string() + " does not match the dataset layout");
  }
  if (ctx.log) ctx.log("training probe on " + std::to_string(ds.count(Split::train)) + " embeddings");
  MethodResult row;
  row.variant = bundle.variant();
  row.latent = bundle.latent();
  row.method = method_name(row.variant, row.latent);
  row.embedding_size = bundle.embedding_dim();
  ProbeConfig probe = c.eval.probe;
  probe.seed = c.seed;
  row.metrics = evaluate_bundle(bundle, ds, probe, c.eval.shuffle_labels);
  if (ctx.log) ctx.log(row.method + " test accuracy " + std::to_string(row.metrics.accuracy));

  const std::vector<MethodResult> rows{row};
  std::vector<std::string> artifacts{"report.csv", "confusion.csv", "metrics.json"};
  write_text(ctx.out_dir / "report.csv", report_csv(rows));
  write_text(ctx.out_dir / "confusion.csv", confusion_csv(rows));
  write_text(ctx.out_dir / "metrics.json", metrics_json(row).dump(2) + "\n");

  const auto test = ds.indices(Split::test);
  const Index n = std::min<Index>(c.eval.reconstructions, static_cast<Index>(test.size()));
  if (n > 0) {
    for (const auto& p : dump_reconstructions(bundle, ds, test, n, ctx.out_dir / "reconstructions")) {
      artifacts.push_back(fs::relative(p, ctx.out_dir).generic_string());
    }
  }
  write_run_files(ctx, "eval", artifacts,
                  {{"checkpoint", checkpoint.generic_string()}, {"shuffle_labels", c.eval.shuffle_labels}});
  return artifacts;
}

std::vector<std::string> cmd_compare(const CommandContext& ctx) {
  const RunConfig& c = ctx.config;
  if (c.eval.variants.empty() && c.eval.proportions.empty()) {
    config_error("compare needs eval.variants and/or eval.proportions");
  }
  const Dataset ds = obtain_dataset(ctx);
  const ExperimentConfig e = c.experiment();
  const EpochCallback on_epoch = epoch_logger(ctx.log);
  std::vector<std::string> artifacts;
  json results = json::object();

  if (!c.eval.variants.empty()) {
    const auto rows = compare_variants(ds, e, c.eval.variants, ctx.out_dir / "variants", on_epoch);
    write_text(ctx.out_dir / "report.csv", report_csv(rows));
    write_text(ctx.out_dir / "confusion.csv", confusion_csv(rows));
    artifacts.insert(artifacts.end(), {"report.csv", "confusion.csv"});
    json list = json::array();
    for (const auto& r : rows) list.push_back(metrics_json(r));
    results["variants"] = list;
  }
  if (!c.eval.proportions.empty()) {
    const auto rows = sweep_subspace(ds, e, c.eval.proportions, ctx.out_dir / "sweep", on_epoch);
    write_text(ctx.out_dir / "sweep.csv", sweep_csv(rows));
    write_text(ctx.out_dir / "sweep_confusion.csv", confusion_csv(rows));
    artifacts.insert(artifacts.end(), {"sweep.csv", "sweep_confusion.csv"});
    json list = json::array();
    for (const auto& r : rows) list.push_back(metrics_json(r));
    results["sweep"] = list;
  }
  results["seed"] = c.seed;
  write_text(ctx.out_dir / "results.json", results.dump(2) + "\n");
  artifacts.push_back("results.json");
  write_run_files(ctx, "compare", artifacts);
  return artifacts;
}

std::string error_report(const std::string& command, const std::string& kind, const std::string& message) {
  return json{{"status", "error"}, {"command", command}, {"kind", kind}, {"message", message}}.dump();
}

}  // namespace subvae
