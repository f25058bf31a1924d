#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "statark/pipeline.hpp"

// Command implementations behind the `statark` binary. Each returns the
// process exit code: 0 success, 1 validation or user error. Errors that
// escape as exceptions are mapped by run(): statark::Error to 1, anything
// else to 2.
namespace statark::cli {

// "1,2,3" or "1 2 3".
std::vector<int64_t> parse_id_list(const std::string& text);

struct BuildOptions {
  std::filesystem::path config_path;
  std::string preset;
  std::optional<uint64_t> seed;
  std::filesystem::path import_path;
  std::string chunks;  // decoder layers per chunk, e.g. "16,16"
  std::optional<int64_t> max_seq_len;
  std::filesystem::path out;
  bool structure_only = false;
};
int cmd_build(const BuildOptions& opts, std::ostream& out);

int cmd_validate(const std::filesystem::path& model_dir, std::ostream& out);

struct SamplingFlags {
  bool greedy = false;
  std::optional<double> temperature;
  std::optional<int64_t> top_k;
  uint64_t seed = 0;

  pipeline::SamplingParams resolve() const;
};

struct GenerateOptions {
  std::filesystem::path model_dir;
  std::optional<std::string> prompt;
  std::optional<std::string> prompt_ids;
  int64_t max_new = 16;
  SamplingFlags sampling;
  std::string stop_ids;
};
int cmd_generate(const GenerateOptions& opts, std::ostream& out);

struct ChatOptions {
  std::filesystem::path model_dir;
  std::filesystem::path template_path;
  SamplingFlags sampling;
  int64_t max_new = 64;
};
int cmd_chat(const ChatOptions& opts, std::istream& in, std::ostream& out);

struct BenchOptions {
  std::string target;  // model directory or preset name
  std::string max_seq_lens = "128,256,512,1024";
  int64_t tokens = 32;
  int64_t prompt_len = 8;
  int64_t warmup = 4;
  int64_t runs = 3;
  uint64_t seed = 0;
  std::string device_label = "cpu";
  std::filesystem::path csv_path;
};

struct BenchRecord {
  int64_t max_seq_len = 0;
  std::string device_label;
  double prefill_ms_per_tok = 0.0;
  double decode_ms_per_tok = 0.0;
  int64_t n_tokens = 0;
};

// One record per requested m; each column is the median over opts.runs.
std::vector<BenchRecord> run_bench(const BenchOptions& opts);
std::string bench_csv(std::span<const BenchRecord> records);
int cmd_bench(const BenchOptions& opts, std::ostream& out);

// Full command line without the program name.
int run(std::span<const std::string> args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace statark::cli
