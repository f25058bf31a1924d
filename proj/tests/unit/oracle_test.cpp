#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <regex>

#include "statark/error.hpp"
#include "statark/kernels.hpp"
#include "statark/oracle.hpp"
#include "statark/pipeline.hpp"
#include "support.hpp"

namespace oracle = statark::oracle;
namespace fs = std::filesystem;
using statark::ModelConfig;
using statark::Tensor;

namespace {

oracle::Fixture golden() { return oracle::read_fixture(statark::test::kFixtureDir / "oracle_seed42.json"); }

statark::WeightSet golden_weights() {
  return statark::read_weights_file(statark::test::kFixtureDir / "oracle_seed42.weights.bin");
}

}  // namespace

TEST(Oracle, ZeroWeightsGiveZeroLogits) {
  const ModelConfig cfg = statark::test::toy_b(8);
  const auto seeded = statark::init_weights_seeded(cfg, 1);
  statark::WeightSet zeros;
  for (const auto& [name, t] : seeded.tensors()) zeros.insert(name, Tensor(t.shape()));
  const std::vector<int64_t> tokens{1, 2, 3};
  for (const auto& row : oracle::dynamic_forward(cfg, zeros, tokens)) {
    for (float v : row) EXPECT_EQ(v, 0.0f);
  }
}

TEST(Oracle, PureFunctionOfInputs) {
  const ModelConfig cfg = statark::test::toy_a();
  const auto w = statark::init_weights_seeded(cfg, 2);
  const auto before = statark::serialize_weights(w);
  const std::vector<int64_t> tokens{4, 4, 0, 10};
  const auto a = oracle::dynamic_forward(cfg, w, tokens);
  EXPECT_EQ(oracle::dynamic_forward(cfg, w, tokens), a);
  EXPECT_EQ(statark::serialize_weights(w), before);
  // Prefix consistency: logits at t do not depend on later tokens.
  const std::vector<int64_t> prefix{4, 4};
  const auto b = oracle::dynamic_forward(cfg, w, prefix);
  EXPECT_EQ(b[0], a[0]);
  EXPECT_EQ(b[1], a[1]);
}

TEST(Oracle, RejectsBadInput) {
  const ModelConfig cfg = statark::test::toy_a();
  const auto w = statark::init_weights_seeded(cfg, 2);
  EXPECT_THROW(oracle::dynamic_forward(cfg, w, {}), statark::Error);
  const std::vector<int64_t> bad{11};
  EXPECT_THROW(oracle::dynamic_forward(cfg, w, bad), statark::Error);
  statark::WeightSet empty;
  EXPECT_THROW(oracle::DynamicModel(cfg, empty), statark::Error);
}

TEST(Oracle, SingleKeyAttentionReturnsItsValue) {
  const std::vector<float> q{0.3f, -2.0f};
  const std::vector<std::vector<float>> k{{1.0f, 1.0f}};
  const std::vector<std::vector<float>> v{{5.0f, -7.0f}};
  EXPECT_EQ(oracle::attention(q, k, v), v[0]);
}

TEST(Oracle, AttentionAgreesWithMaskedKernels) {
  std::mt19937_64 rng(31);
  const int64_t hd = 4;
  for (int64_t m = 1; m <= 16; ++m) {
    for (int64_t n = 1; n <= m; ++n) {
      const Tensor q = statark::test::random_tensor({1, hd}, rng);
      const Tensor keys = statark::test::random_tensor({m, hd}, rng);
      const Tensor vals = statark::test::random_tensor({m, hd}, rng);
      std::vector<std::vector<float>> k_rows, v_rows;
      for (int64_t r = 0; r < n; ++r) {
        k_rows.emplace_back(keys.data().begin() + r * hd, keys.data().begin() + (r + 1) * hd);
        v_rows.emplace_back(vals.data().begin() + r * hd, vals.data().begin() + (r + 1) * hd);
      }
      const auto expected = oracle::attention(q.data(), k_rows, v_rows);

      Tensor scores = statark::kernels::matmul(q, keys, false, true);
      const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
      for (int64_t j = 0; j < m; ++j) {
        scores[j] = j < n ? scores[j] * scale : -std::numeric_limits<float>::infinity();
      }
      const Tensor out = statark::kernels::matmul(statark::kernels::softmax_lastdim(scores), vals);
      for (int64_t d = 0; d < hd; ++d) EXPECT_NEAR(out[d], expected[static_cast<size_t>(d)], 1e-6) << n << "/" << m;
    }
  }
}

TEST(Oracle, FixtureRecomputes) {
  const auto fx = golden();
  EXPECT_EQ(fx.seed, 42u);
  EXPECT_EQ(fx.prompt, (std::vector<int64_t>{3, 1, 4, 1, 5, 9}));
  ASSERT_EQ(fx.logits.size(), fx.prompt.size());
  const auto w = golden_weights();
  EXPECT_EQ(w, statark::init_weights_seeded(fx.cfg, fx.seed));
  const auto report = oracle::compare_logits(oracle::dynamic_forward(fx.cfg, w, fx.prompt), fx.logits, 1e-6);
  EXPECT_TRUE(report.passed) << report.max_abs_diff;
}

TEST(Oracle, PipelineMatchesFixture) {
  const auto fx = golden();
  const auto w = golden_weights();
  for (const auto& plan : {statark::ChunkPlan::single(2), statark::ChunkPlan::from_layer_counts(2, {1, 1})}) {
    auto session = statark::pipeline::GenSession::from_weights(fx.cfg, plan, w);
    oracle::LogitsSeq got;
    for (int64_t tok : fx.prompt) got.push_back(statark::test::values(session.step(tok)));
    const auto report = oracle::compare_logits(got, fx.logits, 1e-5);
    EXPECT_TRUE(report.passed) << report.max_abs_diff;
  }
}

TEST(Oracle, FixtureRoundTrip) {
  statark::test::TempDir dir;
  const auto fx = golden();
  oracle::write_fixture(dir.path() / "f.json", fx);
  const auto back = oracle::read_fixture(dir.path() / "f.json");
  EXPECT_EQ(back.cfg, fx.cfg);
  EXPECT_EQ(back.prompt, fx.prompt);
  EXPECT_EQ(back.logits, fx.logits);
  std::ofstream(dir.path() / "bad.json") << "{\"seed\": 1}";
  EXPECT_THROW(oracle::read_fixture(dir.path() / "bad.json"), statark::Error);
}

TEST(Compare, Cases) {
  const oracle::LogitsSeq a{{1.0f, 2.0f}, {3.0f, 4.0f}, {0.0f, 0.0f}};
  const auto same = oracle::compare_logits(a, a, 0.0);
  EXPECT_TRUE(same.passed);
  EXPECT_EQ(same.max_abs_diff, 0.0);
  EXPECT_FALSE(same.first_divergent_position);

  auto b = a;
  b[1][0] += 1e-3f;
  const auto off = oracle::compare_logits(a, b, 1e-5);
  EXPECT_FALSE(off.passed);
  ASSERT_TRUE(off.first_divergent_position);
  EXPECT_EQ(*off.first_divergent_position, 1u);
  EXPECT_NEAR(off.max_abs_diff, 1e-3, 1e-6);
  EXPECT_TRUE(oracle::compare_logits(a, b, 1e-2).passed);

  const oracle::LogitsSeq shorter{{1.0f, 2.0f}};
  EXPECT_THROW(oracle::compare_logits(a, shorter, 1e-5), statark::Error);
  const oracle::LogitsSeq narrow{{1.0f}, {3.0f}, {0.0f}};
  EXPECT_THROW(oracle::compare_logits(a, narrow, 1e-5), statark::Error);
}

TEST(Compare, NanNeverPasses) {
  const oracle::LogitsSeq a{{1.0f}};
  const oracle::LogitsSeq b{{std::nanf("")}};
  EXPECT_FALSE(oracle::compare_logits(a, b, 1.0).passed);
}

// The reference must stay independent of the code it checks.
TEST(Oracle, SourcesDoNotIncludeSystemUnderTest) {
  const std::regex forbidden(R"(#include\s*["<].*(kernels|executor|builder|pipeline|shapes)[^"]*[">])");
  for (const char* file : {"core/oracle/oracle.cpp", "core/include/statark/oracle.hpp"}) {
    std::ifstream in(statark::test::kSourceDir / file);
    ASSERT_TRUE(in) << file;
    std::string line;
    while (std::getline(in, line)) EXPECT_FALSE(std::regex_search(line, forbidden)) << file << ": " << line;
  }
}
