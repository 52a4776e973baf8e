#pragma once

// Config files and the four pipeline commands behind the subvae tool.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "subvae/data.hpp"
#include "subvae/eval.hpp"
#include "subvae/model.hpp"
#include "subvae/train.hpp"

namespace subvae {

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output = "runs/default";

  struct Data {
    std::filesystem::path dataset;        // empty: generate in memory
    std::optional<std::uint64_t> seed;    // defaults to the global seed
    GeneratorConfig generator;
  } data;

  struct Model {
    Variant variant = Variant::proposed;
    LatentConfig latent;
    double alpha = 1.0;
    Architecture arch;
  } model;

  TrainConfig train;

  struct Eval {
    ProbeConfig probe;
    std::vector<Variant> variants{Variant::standard_vae, Variant::supervised_ae, Variant::proposed};
    std::vector<Proportion> proportions;
    Index reconstructions = 4;
    bool shuffle_labels = false;
  } eval;

  std::uint64_t data_seed() const { return data.seed.value_or(seed); }
  /// Seeds and alpha copied into the train/probe sections.
  ExperimentConfig experiment() const;
  void validate() const;
};

/// Missing keys take defaults; unknown keys and bad values throw
/// Error(config).
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Fully-resolved JSON, every default expanded. Stable key order.
std::string run_config_json(const RunConfig& cfg);
/// SHA-1 of "blob <len>\0" + text, as `git hash-object` prints it.
std::string git_blob_id(std::string_view text);
/// git_blob_id of the resolved config.
std::string config_hash(const RunConfig& cfg);

using LogFn = std::function<void(const std::string&)>;

struct CommandContext {
  RunConfig config;
  std::filesystem::path out_dir;
  int threads = 1;
  LogFn log;  // progress lines; may be empty
};

/// Each command writes config.json and metadata.json next to its outputs and
/// returns the artifact paths (relative to out_dir) it wrote.
std::vector<std::string> cmd_generate(const CommandContext& ctx);
std::vector<std::string> cmd_train(const CommandContext& ctx);
std::vector<std::string> cmd_eval(const CommandContext& ctx, const std::filesystem::path& checkpoint);
std::vector<std::string> cmd_compare(const CommandContext& ctx);

/// {"status":"error","kind":...,"message":...} as one line of JSON.
std::string error_report(const std::string& command, const std::string& kind, const std::string& message);

}  // namespace subvae
