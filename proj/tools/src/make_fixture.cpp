// Regenerates the golden oracle fixture used by the tests:
//   statark-fixture --out tests/fixtures
#include <CLI11.hpp>
#include <iostream>

#include "statark/oracle.hpp"
#include "statark/weights.hpp"

int main(int argc, char** argv) {
  std::filesystem::path out_dir = ".";
  uint64_t seed = 42;
  CLI::App app{"Write oracle golden logits for the toy fixture"};
  app.add_option("--out", out_dir, "Directory for <name>.json and <name>.weights.bin");
  app.add_option("--seed", seed, "Weight seed");
  CLI11_PARSE(app, argc, argv);

  try {
    statark::oracle::Fixture fixture;
    fixture.cfg = {8, 2, 2, 1, 11, 16, 1e-5, 10000.0, 16};
    fixture.seed = seed;
    fixture.prompt = {3, 1, 4, 1, 5, 9};
    const statark::WeightSet weights = statark::init_weights_seeded(fixture.cfg, seed);
    fixture.logits = statark::oracle::dynamic_forward(fixture.cfg, weights, fixture.prompt);

    const std::string stem = "oracle_seed" + std::to_string(seed);
    std::filesystem::create_directories(out_dir);
    statark::write_weights_file(out_dir / (stem + ".weights.bin"), weights);
    statark::oracle::write_fixture(out_dir / (stem + ".json"), fixture);
    std::cout << "wrote " << (out_dir / (stem + ".json")).string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
