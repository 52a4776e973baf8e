#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <omp.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "subvae/cli.hpp"

namespace fs = std::filesystem;
using namespace subvae;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 1;
  std::string dataset;

  std::optional<Index> cells_per_class;
  std::optional<double> difficulty;
  std::string variant;
  std::optional<Index> epochs;
  std::string checkpoint;
  bool shuffle_labels = false;
  std::string variants;
  std::string sweep;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) items.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return items;
}

RunConfig resolve(const Flags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.output = f.out;
  if (!f.dataset.empty()) cfg.data.dataset = f.dataset;
  if (f.cells_per_class) cfg.data.generator.cells_per_class = *f.cells_per_class;
  if (f.difficulty) cfg.data.generator.difficulty = *f.difficulty;
  if (!f.variant.empty()) cfg.model.variant = parse_variant(f.variant);
  if (f.epochs) cfg.train.epochs = *f.epochs;
  if (f.shuffle_labels) cfg.eval.shuffle_labels = true;
  if (!f.variants.empty()) {
    cfg.eval.variants.clear();
    if (f.variants == "all") {
      cfg.eval.variants = {Variant::standard_vae, Variant::supervised_ae, Variant::proposed};
    } else if (f.variants != "none") {
      for (const auto& v : split_list(f.variants)) cfg.eval.variants.push_back(parse_variant(v));
    }
  }
  if (!f.sweep.empty()) {
    cfg.eval.proportions.clear();
    for (const auto& p : split_list(f.sweep)) cfg.eval.proportions.push_back(Proportion::parse(p));
    // --sweep on its own runs only the sweep
    if (f.variants.empty()) cfg.eval.variants.clear();
  }
  cfg.validate();
  return cfg;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
      return 2;
    case ErrorKind::io:
      return 3;
    case ErrorKind::data:
      return 4;
    default:
      return 1;
  }
}

void report_failure(const std::string& command, const std::string& kind, const std::string& message,
                    const std::string& out) {
  const std::string report = error_report(command, kind, message);
  std::cout << report << std::endl;
  if (!out.empty()) {
    std::error_code ec;
    fs::create_directories(out, ec);
    std::ofstream(fs::path(out) / "error.json") << report << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  auto sink = std::getenv("SUBVAE_NO_COLOR")
                  ? std::shared_ptr<spdlog::sinks::sink>(std::make_shared<spdlog::sinks::stderr_sink_mt>())
                  : std::shared_ptr<spdlog::sinks::sink>(std::make_shared<spdlog::sinks::stderr_color_sink_mt>());
  auto logger = std::make_shared<spdlog::logger>("subvae", sink);
  logger->set_pattern("[%H:%M:%S.%e] %^%l%$ %v");
  spdlog::set_default_logger(logger);

  Flags f;
  CLI::App app{"Subspace-supervised VAE for multiplexed cell patches"};
  app.require_subcommand(1);
  app.add_option("--config", f.config, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed, "Global seed");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--threads", f.threads, "Worker threads")->check(CLI::PositiveNumber);

  auto* generate = app.add_subcommand("generate", "Render a synthetic cohort and write a dataset directory");
  generate->add_option("--cells-per-class", f.cells_per_class);
  generate->add_option("--difficulty", f.difficulty);

  auto* train = app.add_subcommand("train", "Fit one model variant");
  train->add_option("--dataset", f.dataset, "Dataset directory (default: generate in memory)");
  train->add_option("--variant", f.variant, "proposed, standard_vae or supervised_ae");
  train->add_option("--epochs", f.epochs);

  auto* eval = app.add_subcommand("eval", "Probe a trained checkpoint on the test split");
  eval->add_option("--dataset", f.dataset, "Dataset directory (default: generate in memory)");
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint directory, e.g. <train-out>/best")->required();
  eval->add_flag("--shuffle-labels", f.shuffle_labels, "Permute probe training labels");

  auto* compare = app.add_subcommand("compare", "Train and probe several variants or subspace sizes");
  compare->add_option("--dataset", f.dataset, "Dataset directory (default: generate in memory)");
  compare->add_option("--variants", f.variants, "all, none or a comma list");
  compare->add_option("--sweep", f.sweep, "Comma list of proportions, e.g. 1,1/2,1/8,1/16");
  compare->add_option("--epochs", f.epochs);

  for (auto* sub : {generate, train, eval, compare}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_failure("", "usage", e.what(), "");
    return 64;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  std::string out = f.out;
  try {
    const RunConfig cfg = resolve(f);
    out = cfg.output.string();
    omp_set_num_threads(f.threads);

    CommandContext ctx{cfg, cfg.output, f.threads, [](const std::string& line) { spdlog::info("{}", line); }};
    spdlog::info("{} -> {} (seed {}, config {})", command, ctx.out_dir.string(), cfg.seed,
                 config_hash(cfg).substr(0, 12));

    std::vector<std::string> artifacts;
    if (command == "generate") artifacts = cmd_generate(ctx);
    if (command == "train") artifacts = cmd_train(ctx);
    if (command == "eval") artifacts = cmd_eval(ctx, f.checkpoint);
    if (command == "compare") artifacts = cmd_compare(ctx);

    for (const auto& a : artifacts) {
      const fs::path p = ctx.out_dir / a;
      if (!fs::is_regular_file(p) || fs::file_size(p) == 0) {
        throw Error(ErrorKind::io, "artifact missing or empty: " + p.string());
      }
    }
    spdlog::info("wrote {} artifacts", artifacts.size());
    return 0;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    report_failure(command, to_string(e.kind()), e.what(), out);
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    report_failure(command, "internal", e.what(), out);
    return 1;
  }
}
