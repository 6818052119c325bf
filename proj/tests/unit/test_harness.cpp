#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "mrai/harness.hpp"

using namespace mrai;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  const auto kv = parse_key_values(
      "phantom.size = 64\n"
      "subjects.source = 2\n"
      "subjects.heldout = 1\n"
      "patches.source_per_tissue = 10\n"
      "patches.test_per_tissue = 10\n"
      "grid = 1,2\n"
      "repetitions = 2\n"
      "pairs.budget = 200\n"
      "siamese.epochs = 1\n"
      "siamese.batch_size = 50\n"
      "cnn.epochs = 1\n"
      "svm.max_epochs = 20\n"
      "adist.svm.c = 1\n"
      "workers = 2\n");
  return config_from_key_values(kv);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("config round-trips through key=value text") {
  ExperimentConfig c = tiny_config();
  c.source_noise_sigma = 0.001;
  c.protocols.target.tissue_params[Tissue::csf].t1_ms = 4321.5;
  const auto kv = config_to_key_values(c);
  const auto back = config_from_key_values(kv);
  CHECK(config_to_key_values(back) == kv);
  CHECK(back.phantom_size == 64);
  CHECK(back.grid == std::vector<std::size_t>{1, 2});
  CHECK(back.source_noise_sigma == 0.001);
  CHECK(back.protocols.target.tissue_params[Tissue::csf].t1_ms == 4321.5);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(config_from_key_values({{"no.such.key", "1"}}), FormatError);
  CHECK_THROWS_AS(config_from_key_values({{"repetitions", "many"}}), FormatError);
  CHECK_THROWS_AS(config_from_key_values({{"grid", "1,,2"}}), FormatError);
  CHECK_THROWS_AS(config_from_key_values({{"repetitions", "0"}}).validate(), FormatError);
  CHECK_THROWS_AS(config_from_key_values({{"pairs.similar_fraction", "1"}}).validate(), FormatError);
}

TEST_CASE("seeds are distinct across repetitions and cells") {
  std::set<std::uint64_t> seen;
  for (std::size_t r = 0; r < 5; ++r) {
    CHECK(seen.insert(repetition_seed(1, r)).second);
    for (std::size_t n : {1, 5, 10, 50, 100, 500, 1000}) CHECK(seen.insert(cell_seed(1, r, n)).second);
  }
  CHECK(repetition_seed(1, 0) != repetition_seed(2, 0));
}

TEST_CASE("repetition data") {
  const auto c = tiny_config();
  const auto d = simulate_repetition(c, 0);
  CHECK(d.source.size() == 2 * 3 * 10);
  CHECK(d.test.size() == 1 * 3 * 10);
  CHECK(d.target_scans.size() == 1);
  for (const auto& p : d.source) CHECK(p.scanner == ScannerId::source);
  for (const auto& p : d.test) CHECK(p.scanner == ScannerId::target);
  // held-out subjects are distinct from the target training subject
  for (const auto& p : d.test) CHECK(p.subject_id != d.target_scans[0].subject_id);

  const auto labels = draw_target_labels(c, d, 4, 9);
  CHECK(labels.size() == 12);
  CHECK(draw_target_labels(c, d, 4, 9) == labels);
}

TEST_CASE("small experiment: rows, determinism, plots") {
  const auto c = tiny_config();
  const auto curve = run_experiment(c);
  REQUIRE(curve.cells.size() == 4);
  for (const auto& r : curve.cells) {
    CHECK(r.ok);
    CHECK(r.error_mrai >= 0.0);
    CHECK(r.error_mrai <= 1.0);
    CHECK(r.raw.distance >= 0.0);
    CHECK(r.raw.distance <= 2.0);
    CHECK(r.history.epochs() == 1);
  }
  const auto csv = curve_csv(curve);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == kCurveHeader);
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 4 * 5);

  // a second run, single-threaded this time, gives identical bytes
  auto serial = c;
  serial.workers = 1;
  CHECK(curve_csv(run_experiment(serial)) == csv);

  const auto dir = fs::temp_directory_path() / "mrai_unit" / "curve";
  fs::create_directories(dir);
  write_curve_csv(dir / "curve.csv", curve);
  const auto back = read_curve_csv(dir / "curve.csv");
  CHECK(curve_csv(back) == csv);

  const auto warnings = emit_plots(curve, dir);
  CHECK(warnings.empty());
  const auto da = slurp(dir / "dA.svg");
  const auto err = slurp(dir / "error.svg");
  CHECK(da.find("<svg") != std::string::npos);
  CHECK(da.find("class=\"legend\"") != std::string::npos);
  for (const char* name : {"source", "target", "mrai"}) {
    CHECK(err.find(std::string("data-name=\"") + name + "\"") != std::string::npos);
  }
}

TEST_CASE("a failing cell is recorded and the rest continue") {
  auto c = tiny_config();
  c.grid = {1, 100000};
  c.repetitions = 1;
  const auto curve = run_experiment(c);
  REQUIRE(curve.cells.size() == 2);
  CHECK(curve.cells[0].ok);
  CHECK_FALSE(curve.cells[1].ok);
  CHECK(curve.cells[1].failure.find("exhausted") != std::string::npos);
  const auto csv = curve_csv(curve);
  CHECK(csv.find("failed") != std::string::npos);

  const auto dir = fs::temp_directory_path() / "mrai_unit" / "failed";
  const auto warnings = emit_plots(curve, dir);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("n=100000") != std::string::npos);
}

TEST_CASE("history csv") {
  TrainHistory h;
  h.loss = {0.5, 0.25};
  h.mean_similar_distance = {0.1, 0.05};
  h.mean_dissimilar_distance = {0.7, 0.9};
  const auto path = fs::temp_directory_path() / "mrai_unit" / "history.csv";
  fs::create_directories(path.parent_path());
  write_history_csv(path, h);
  CHECK(slurp(path) == "epoch,loss,mean_sim_dist,mean_dis_dist\n1,0.5,0.1,0.7\n2,0.25,0.05,0.9\n");
}

TEST_CASE("output root honours the environment") {
  ::unsetenv("MRAI_OUT_DIR");
  CHECK(output_root("fallback") == fs::path("fallback"));
  ::setenv("MRAI_OUT_DIR", "/tmp/elsewhere", 1);
  CHECK(output_root("fallback") == fs::path("/tmp/elsewhere"));
  ::unsetenv("MRAI_OUT_DIR");
}
