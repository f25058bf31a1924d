#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "statark/cli/commands.hpp"
#include "statark/error.hpp"

namespace statark::cli {
namespace {

void setup_logging(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true);
  auto logger = std::make_shared<spdlog::logger>("statark", sink);
  logger->set_pattern("[%l] %v");
  logger->set_level(spdlog::level::err);
  if (const char* level = std::getenv("STATARK_LOG")) {
    const std::string value(level);
    if (value == "debug") {
      logger->set_level(spdlog::level::debug);
    } else if (value == "info") {
      logger->set_level(spdlog::level::info);
    } else if (value != "error") {
      err << "warning: STATARK_LOG must be error, info or debug; using error\n";
    }
  }
  spdlog::set_default_logger(std::move(logger));
}

void add_sampling(CLI::App& cmd, SamplingFlags& flags) {
  cmd.add_flag("--greedy", flags.greedy, "Pick the most likely token (default)");
  cmd.add_option("--temp", flags.temperature, "Sample from softmax(logits / t)")->check(CLI::PositiveNumber);
  cmd.add_option("--top-k", flags.top_k, "Sample among the k most likely tokens")->check(CLI::PositiveNumber);
  cmd.add_option("--seed", flags.seed, "Sampler seed");
}

}  // namespace

int run(std::span<const std::string> args, std::istream& in, std::ostream& out, std::ostream& err) {
  setup_logging(err);

  CLI::App app{"Static-shape transformer inference"};
  app.require_subcommand(1);

  BuildOptions build;
  auto* build_cmd = app.add_subcommand("build", "Build a chunked, stateful model directory");
  build_cmd->add_option("--config", build.config_path, "Model config JSON");
  build_cmd->add_option("--preset", build.preset, "Named config (toy, llama3-8b-shape, ...)");
  build_cmd->add_option("--seed", build.seed, "Seed for random weights (default 0)");
  build_cmd->add_option("--import", build.import_path, "Weights container to import");
  build_cmd->add_option("--chunks", build.chunks, "Decoder layers per chunk, e.g. 16,16");
  build_cmd->add_option("--max-seq-len", build.max_seq_len, "Override the cache length m")->check(CLI::PositiveNumber);
  build_cmd->add_option("--out", build.out, "Output directory")->required();
  build_cmd->add_flag("--structure-only", build.structure_only, "Write graphs and config without weights");

  std::filesystem::path validate_dir;
  auto* validate_cmd = app.add_subcommand("validate", "Check shapes and naming of a model directory");
  validate_cmd->add_option("model_dir", validate_dir)->required();

  GenerateOptions gen;
  auto* gen_cmd = app.add_subcommand("generate", "Generate tokens after a prompt");
  gen_cmd->add_option("model_dir", gen.model_dir)->required();
  gen_cmd->add_option("--prompt", gen.prompt, "Prompt text (byte tokens)");
  gen_cmd->add_option("--prompt-ids", gen.prompt_ids, "Prompt token ids, comma separated");
  gen_cmd->add_option("--max-new", gen.max_new, "Maximum new tokens");
  gen_cmd->add_option("--stop", gen.stop_ids, "Stop token ids, comma separated");
  add_sampling(*gen_cmd, gen.sampling);

  ChatOptions chat;
  auto* chat_cmd = app.add_subcommand("chat", "Interactive chat; /reset clears, /quit exits");
  chat_cmd->add_option("model_dir", chat.model_dir)->required();
  chat_cmd->add_option("--template", chat.template_path, "Chat template JSON");
  chat_cmd->add_option("--max-new", chat.max_new, "Maximum reply tokens")->check(CLI::NonNegativeNumber);
  add_sampling(*chat_cmd, chat.sampling);

  BenchOptions bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time prefill and decode across cache lengths");
  bench_cmd->add_option("target", bench.target, "Model directory or preset name")->required();
  bench_cmd->add_option("--max-seq-lens", bench.max_seq_lens, "Cache lengths m to test");
  bench_cmd->add_option("--tokens", bench.tokens, "Timed decode steps per run (>= 32)");
  bench_cmd->add_option("--prompt-len", bench.prompt_len, "Prefill length");
  bench_cmd->add_option("--runs", bench.runs, "Runs per m; the median is reported");
  bench_cmd->add_option("--seed", bench.seed, "Weight seed for presets");
  bench_cmd->add_option("--device-label", bench.device_label, "Label written to the CSV");
  bench_cmd->add_option("--csv", bench.csv_path, "Write CSV here instead of stdout");

  std::vector<const char*> argv{"statark"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*build_cmd) return cmd_build(build, out);
    if (*validate_cmd) return cmd_validate(validate_dir, out);
    if (*gen_cmd) return cmd_generate(gen, out);
    if (*chat_cmd) return cmd_chat(chat, in, out);
    if (*bench_cmd) return cmd_bench(bench, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace statark::cli
