#pragma once

// Learning-curve experiment: simulated subjects, MRAI-net and the two CNN
// baselines trained across a grid of labeled-target budgets, CSV and SVG
// output.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mrai/eval.hpp"
#include "mrai/io.hpp"
#include "mrai/phantom.hpp"
#include "mrai/siamese.hpp"

namespace mrai {

struct ExperimentConfig {
  std::uint64_t master_seed = 1;
  std::size_t phantom_size = 128;
  PhantomShape shape{};
  std::size_t source_subjects = 4;
  std::size_t target_train_subjects = 1;
  std::size_t heldout_subjects = 4;
  /// Tissue tables and sequence timing. Noise levels are set by
  /// resolved_protocols(), not by the noise_sigma fields here.
  ProtocolPair protocols = default_protocols();
  /// Shared receiver noise: this fraction of the largest noiseless tissue
  /// signal over both protocols, unless a per-scanner sigma is given.
  double noise_floor_fraction = 0.01;
  std::optional<double> source_noise_sigma;
  std::optional<double> target_noise_sigma;
  /// Source training patches drawn per tissue from each source subject.
  std::size_t source_patches_per_tissue = 300;
  /// Test patches drawn per tissue from each held-out target subject.
  std::size_t test_patches_per_tissue = 50;
  std::vector<std::size_t> grid{1, 5, 10, 50, 100, 500, 1000};
  std::size_t repetitions = 5;

  std::size_t pair_budget = 8000;
  double similar_fraction = 0.5;
  SiameseConfig siamese{};
  CnnConfig cnn{};
  /// Tissue classifier on MRAI features. The mean-hinge objective needs a
  /// large C on 2-D features; the scanner discriminator keeps adist.svm.c = 1.
  SvmConfig svm{.c = 100.0};
  ADistanceConfig adist{};
  /// 0 means one worker per hardware thread.
  std::size_t workers = 0;

  void validate() const;
  ProtocolPair resolved_protocols() const;
};

/// Reads `key = value` overrides on top of the defaults. Unknown keys and
/// malformed values throw FormatError.
ExperimentConfig config_from_key_values(const KeyValues& kv, ExperimentConfig base = {});
/// Every setting, in the same format config_from_key_values() accepts.
KeyValues config_to_key_values(const ExperimentConfig& c);

/// Seeds of one repetition, derived from the master seed.
std::uint64_t repetition_seed(std::uint64_t master, std::size_t repetition);
/// Seed of one (repetition, n) cell. Keyed by n, not grid position, so growing
/// the grid leaves existing cells unchanged.
std::uint64_t cell_seed(std::uint64_t master, std::size_t repetition, std::size_t n);

/// Simulated patches of one repetition.
struct SubjectData {
  std::vector<Patch> source;        // all source subjects
  std::vector<Scan> target_scans;   // target training subjects
  std::vector<LabelMap> target_maps;
  std::vector<Patch> test;          // held-out target subjects
};

SubjectData simulate_repetition(const ExperimentConfig& c, std::size_t repetition);

/// Exactly n labeled patches per tissue from the target training subjects.
std::vector<Patch> draw_target_labels(const ExperimentConfig& c, const SubjectData& data,
                                      std::size_t n, std::uint64_t seed);

struct CellResult {
  std::size_t repetition = 0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string failure;
  double error_source = 0.0;
  double error_target = 0.0;
  double error_mrai = 0.0;
  ADistance raw{};
  ADistance mrai{};
  TrainHistory history;
  double seconds = 0.0;
};

struct CurveResult {
  std::vector<CellResult> cells;  // ordered by (repetition, grid position)
};

using ProgressFn = std::function<void(const CellResult&)>;

/// Runs one (repetition, n) cell; failures are captured in the result.
CellResult run_cell(const ExperimentConfig& c, std::size_t repetition, std::size_t n);

/// Runs the listed cells on a bounded worker pool; results keep input order.
std::vector<CellResult> run_cells(const ExperimentConfig& c,
                                  const std::vector<std::pair<std::size_t, std::size_t>>& cells,
                                  const ProgressFn& progress = {});

CurveResult run_experiment(const ExperimentConfig& c, const ProgressFn& progress = {});

inline constexpr const char* kCurveHeader = "model,n_target_labels,seed,e_scanner,d_A,tissue_error";

/// Five rows per cell: source, target and mrai tissue errors, then the
/// scanner-discrimination rows dA_raw (patches) and dA_mrai (features).
/// Failed cells write the marker "failed" in place of values.
std::string curve_csv(const CurveResult& curve);
void write_curve_csv(const std::filesystem::path& path, const CurveResult& curve);
CurveResult read_curve_csv(const std::filesystem::path& path);

/// Writes dA.svg and error.svg; returns warnings about omitted cells.
std::vector<std::string> emit_plots(const CurveResult& curve, const std::filesystem::path& out_dir);

void write_history_csv(const std::filesystem::path& path, const TrainHistory& h);

/// Output root: $MRAI_OUT_DIR when set, otherwise `fallback`.
std::filesystem::path output_root(const std::filesystem::path& fallback);

}  // namespace mrai
