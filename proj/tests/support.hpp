#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "statark/model_config.hpp"
#include "statark/tensor.hpp"

namespace statark::test {

inline const std::filesystem::path kFixtureDir = STATARK_FIXTURE_DIR;
inline const std::filesystem::path kSourceDir = STATARK_SOURCE_DIR;

// dim 8, heads 2, kv heads 1, layers 2, vocab 11.
inline ModelConfig toy_a(int64_t m = 16) { return {8, 2, 2, 1, 11, 16, 1e-5, 10000.0, m}; }
// dim 16, heads 4, kv heads 2, layers 3, vocab 17.
inline ModelConfig toy_b(int64_t m = 16) { return {16, 3, 4, 2, 17, 32, 1e-5, 10000.0, m}; }

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> dist(lo, hi);
  for (float& v : t.data()) v = dist(rng);
  return t;
}

inline std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("statark-test-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace statark::test
