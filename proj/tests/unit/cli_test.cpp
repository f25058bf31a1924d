#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "statark/builder.hpp"
#include "statark/cli/commands.hpp"
#include "statark/cli/tokenizer.hpp"
#include "statark/error.hpp"
#include "statark/oracle.hpp"
#include "support.hpp"

namespace cli = statark::cli;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args, const std::string& stdin_text = "") {
  std::istringstream in(stdin_text);
  std::ostringstream out, err;
  const int code = cli::run(args, in, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return statark::builder::read_text_file(p); }

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

std::string line_starting(const std::string& text, const std::string& prefix) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind(prefix, 0) == 0) return line.substr(prefix.size());
  }
  return {};
}

// Small toy build shared by several tests.
class ToyDir : public ::testing::Test {
 protected:
  void SetUp() override {
    const Outcome r = run({"build", "--preset", "toy", "--max-seq-len", "32", "--seed", "3", "--chunks", "1,1", "--out",
                           dir.path().string()});
    ASSERT_EQ(r.code, 0) << r.out << r.err;
  }
  std::string model() const { return dir.path().string(); }
  statark::test::TempDir dir;
};

}  // namespace

TEST(Cli, ParseIdList) {
  EXPECT_EQ(cli::parse_id_list("1,2, 3"), (std::vector<int64_t>{1, 2, 3}));
  EXPECT_EQ(cli::parse_id_list("4 5"), (std::vector<int64_t>{4, 5}));
  EXPECT_TRUE(cli::parse_id_list("").empty());
  EXPECT_THROW(cli::parse_id_list("1,x"), statark::Error);
}

TEST(Cli, ByteTokenizer) {
  const cli::ByteTokenizer tok(260);
  const auto ids = tok.encode("hé");
  EXPECT_EQ(ids, (std::vector<int64_t>{'h', 0xC3, 0xA9}));
  EXPECT_EQ(tok.decode(ids), "hé");
  const std::vector<int64_t> special{257};
  EXPECT_EQ(tok.decode(special), "<|257|>");
  EXPECT_EQ(cli::printable("a\nb"), "a\\x0ab");
  EXPECT_THROW(cli::ByteTokenizer(100), statark::Error);
}

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"build"}).code, 1);  // --out is required
  const Outcome r = run({"build", "--preset", "nope", "--out", "/tmp/statark-never"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(Cli, BuildEightBStructureOnlyWritesFourModels) {
  statark::test::TempDir dir;
  const Outcome r = run({"build", "--preset", "llama3-8b-shape", "--chunks", "16,16", "--structure-only", "--out",
                         dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("4 IR models written to"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("chunk decoder_16_32"), std::string::npos);
  int xml = 0;
  for (const auto& e : fs::directory_iterator(dir.path() / "llm_dir")) xml += e.path().extension() == ".xml";
  EXPECT_EQ(xml, 4);
  EXPECT_EQ(run({"validate", dir.path().string()}).code, 0);
}

TEST(Cli, BuildRefusesHugeSeededWeights) {
  statark::test::TempDir dir;
  const Outcome r = run({"build", "--preset", "llama3-8b-shape", "--out", dir.path().string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--structure-only"), std::string::npos) << r.err;
}

TEST(Cli, BuildIsDeterministic) {
  statark::test::TempDir a, b;
  for (const auto* d : {&a, &b}) {
    ASSERT_EQ(run({"build", "--preset", "toy", "--max-seq-len", "16", "--seed", "5", "--out", d->path().string()}).code,
              0);
  }
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path rel = fs::relative(e.path(), a.path());
    EXPECT_EQ(statark::read_binary_file(e.path()), statark::read_binary_file(b.path() / rel)) << rel;
  }
  EXPECT_EQ(files, 8);  // config, container, three xml/bin pairs
}

TEST_F(ToyDir, ValidateClean) {
  const Outcome r = run({"validate", model()});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("llm_dir/decoder_0_1.xml: ok"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("valid: 4 chunks"), std::string::npos) << r.out;
}

TEST_F(ToyDir, ValidateRejectsDynamicDim) {
  const fs::path xml = dir.path() / "llm_dir" / "decoder_1_2.xml";
  std::string text = slurp(xml);
  const size_t at = text.find("<dim>64</dim>");
  ASSERT_NE(at, std::string::npos);
  text.replace(at, 13, "<dim>?</dim>");
  std::ofstream(xml) << text;
  const Outcome r = run({"validate", model()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("decoder_1_2.xml"), std::string::npos);
  EXPECT_NE(r.out.find("invalid:"), std::string::npos) << r.out;
}

TEST_F(ToyDir, ValidateFlagsRenamedCache) {
  const fs::path xml = dir.path() / "llm_dir" / "decoder_0_1.xml";
  std::string text = slurp(xml);
  replace_all(text, "\"cache_k_0\"", "\"kcache_0\"");
  std::ofstream(xml) << text;
  const Outcome r = run({"validate", model()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("kcache_0"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("cache_k_0"), std::string::npos) << r.out;
}

TEST_F(ToyDir, ValidateRejectsMissingChunk) {
  fs::remove(dir.path() / "llm_dir" / "lm_head.xml");
  EXPECT_EQ(run({"validate", model()}).code, 1);
}

TEST_F(ToyDir, GenerateGreedyIsRepeatable) {
  const Outcome a = run({"generate", model(), "--prompt", "hi", "--max-new", "6"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(line_starting(a.out, "prompt_ids: "), "104 105");
  const std::string ids = line_starting(a.out, "generated_ids: ");
  EXPECT_EQ(cli::parse_id_list(ids).size(), 6u);
  EXPECT_NE(a.out.find("text: "), std::string::npos);
  EXPECT_EQ(run({"generate", model(), "--prompt", "hi", "--max-new", "6"}).out, a.out);
}

TEST_F(ToyDir, GenerateZeroAndOverflow) {
  const Outcome zero = run({"generate", model(), "--prompt-ids", "1,2", "--max-new", "0"});
  EXPECT_EQ(zero.code, 0);
  EXPECT_EQ(line_starting(zero.out, "generated_ids:"), "");
  EXPECT_EQ(run({"generate", model(), "--prompt-ids", "1,2", "--max-new", "31"}).code, 1);
  EXPECT_EQ(run({"generate", model(), "--prompt-ids", "1,999"}).code, 1);
  EXPECT_EQ(run({"generate", model()}).code, 1);  // no prompt
}

TEST_F(ToyDir, GenerateSeededSampling) {
  const std::vector<std::string> args{"generate", model(), "--prompt", "a", "--temp", "0.9", "--top-k", "20",
                                      "--seed", "11", "--max-new", "8"};
  const Outcome a = run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(run(args).out, a.out);
}

TEST_F(ToyDir, ChatRepl) {
  const Outcome r = run({"chat", model(), "--max-new", "4"}, "hi\n/quit\nnever\n");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1) << r.out;
  EXPECT_EQ(r.out.rfind("assistant: ", 0), 0u) << r.out;
}

TEST_F(ToyDir, ChatResetReproducesFirstReply) {
  const Outcome r = run({"chat", model(), "--max-new", "4"}, "hi\n/reset\nhi\n");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream is(r.out);
  std::string first, reset, second;
  std::getline(is, first);
  std::getline(is, reset);
  std::getline(is, second);
  EXPECT_EQ(reset, "[conversation reset]");
  EXPECT_EQ(first, second);
}

TEST_F(ToyDir, ChatOverflowWarns) {
  // m = 32: each turn costs at least 5 + 8 tokens, so the third turn overflows.
  const Outcome r = run({"chat", model(), "--max-new", "8"}, "abcdefgh\nabcdefgh\nabcdefgh\n");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("warning: conversation exceeds the 32-token context; starting over"), std::string::npos)
      << r.out;
  const Outcome big = run({"chat", model()}, std::string(40, 'x') + "\n");
  EXPECT_NE(big.out.find("message alone does not fit"), std::string::npos) << big.out;
}

TEST(Cli, GenerateFromImportedFixtureMatchesOracle) {
  statark::test::TempDir dir;
  const auto fx = statark::oracle::read_fixture(statark::test::kFixtureDir / "oracle_seed42.json");
  const fs::path cfg = dir.path() / "cfg.json";
  std::ofstream(cfg) << statark::builder::config_to_json(fx.cfg, statark::ChunkPlan::single(fx.cfg.n_layers));
  const fs::path out = dir.path() / "model";
  const Outcome b = run({"build", "--config", cfg.string(), "--import",
                         (statark::test::kFixtureDir / "oracle_seed42.weights.bin").string(), "--out", out.string()});
  ASSERT_EQ(b.code, 0) << b.err;
  const Outcome g = run({"generate", out.string(), "--prompt-ids", "3,1,4,1,5,9", "--max-new", "1"});
  ASSERT_EQ(g.code, 0) << g.err;
  const auto& last = fx.logits.back();
  const int64_t expected = std::max_element(last.begin(), last.end()) - last.begin();
  EXPECT_EQ(line_starting(g.out, "generated_ids: "), std::to_string(expected));
  EXPECT_EQ(g.out.find("text: "), std::string::npos);  // vocab 11 has no byte text
}

TEST(Cli, BenchWritesOneRowPerLength) {
  statark::test::TempDir dir;
  const fs::path csv = dir.path() / "bench.csv";
  const Outcome r = run({"bench", "toy", "--max-seq-lens", "48,64", "--runs", "1", "--device-label", "ci", "--csv",
                         csv.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream is(slurp(csv));
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "m,device_label,prefill_ms_per_tok,decode_ms_per_tok,n_tokens");
  std::vector<std::string> rows;
  while (std::getline(is, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].rfind("48,ci,", 0), 0u);
  EXPECT_EQ(rows[1].rfind("64,ci,", 0), 0u);
  for (const auto& row : rows) EXPECT_EQ(row.substr(row.rfind(',') + 1), "32");
}

TEST(Cli, BenchRejectsBadArguments) {
  EXPECT_EQ(run({"bench", "toy", "--tokens", "8"}).code, 1);
  EXPECT_EQ(run({"bench", "toy", "--max-seq-lens", "16"}).code, 1);  // too short for prompt + warmup + tokens
  EXPECT_EQ(run({"bench", "toy", "--device-label", "a,b"}).code, 1);
  EXPECT_EQ(run({"bench", "/no/such/dir"}).code, 1);
}
