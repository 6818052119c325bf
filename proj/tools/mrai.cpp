// mrai: command-line front end for simulation, pair building, MRAI-net
// training, feature extraction, evaluation and learning curves.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "mrai/eval.hpp"
#include "mrai/harness.hpp"
#include "mrai/io.hpp"
#include "mrai/pairs.hpp"
#include "mrai/rng.hpp"
#include "mrai/siamese.hpp"

namespace fs = std::filesystem;
using namespace mrai;

namespace {

enum class Verbosity { quiet, normal, verbose };

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
  bool quiet = false;
  bool verbose = false;

  Verbosity verbosity() const {
    return quiet ? Verbosity::quiet : (verbose ? Verbosity::verbose : Verbosity::normal);
  }
};

void add_common(CLI::App* app, Common& c, const std::string& out_default) {
  app->add_option("--seed", c.seed, "Master seed (overrides the config)");
  app->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "Output directory (env MRAI_OUT_DIR overrides the default)")
      ->default_str(out_default);
  app->add_option("--set", c.overrides, "Extra key=value config override (repeatable)");
  auto* q = app->add_flag("--quiet,-q", c.quiet, "Only print errors");
  app->add_flag("--verbose,-v", c.verbose, "Print progress details")->excludes(q);
}

ExperimentConfig load_config(const Common& c) {
  KeyValues kv;
  if (!c.config.empty()) kv = read_key_values(c.config);
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw FormatError("--set expects key=value, got '" + o + "'");
    KeyValues one = parse_key_values(o, "--set");
    for (auto& [k, v] : one) kv[k] = v;
  }
  if (c.seed) kv["seed"] = std::to_string(*c.seed);
  return config_from_key_values(kv);
}

fs::path out_dir(const Common& c, const std::string& fallback) {
  const fs::path dir = c.out.empty() ? output_root(fallback) : fs::path(c.out);
  fs::create_directories(dir);
  return dir;
}

void log(const Common& c, const std::string& msg) {
  if (c.verbosity() != Verbosity::quiet) std::cerr << msg << "\n";
}

void write_features_csv(const fs::path& path, const std::vector<Patch>& patches,
                        const FeatureMatrix& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << "index,scanner,subject,tissue";
  for (std::size_t j = 0; j < f.cols; ++j) out << ",f" << j;
  out << "\n";
  for (std::size_t i = 0; i < f.rows; ++i) {
    out << i << "," << (patches[i].scanner == ScannerId::source ? "A" : "B") << ","
        << patches[i].subject_id << "," << tissue_name(patches[i].tissue);
    for (double v : f.row(i)) out << "," << format_double(v);
    out << "\n";
  }
}

std::vector<Patch> pooled(const Dataset& d) {
  std::vector<Patch> all = d.source;
  all.insert(all.end(), d.target.begin(), d.target.end());
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MR acquisition-invariant patch representations"};
  app.require_subcommand(1);

  Common c_sim, c_pairs, c_train, c_feat, c_eval, c_curve, c_plot;

  auto* sim = app.add_subcommand("simulate", "Simulate subjects and write patch datasets");
  add_common(sim, c_sim, "out");
  std::size_t sim_n = 100;
  std::size_t sim_rep = 0;
  sim->add_option("--n", sim_n, "Labeled target patches per tissue")->capture_default_str();
  sim->add_option("--repetition", sim_rep, "Repetition index for seed derivation")
      ->capture_default_str();

  auto* pairs_cmd = app.add_subcommand("pairs", "Sample similarity-labeled pairs into a dataset");
  add_common(pairs_cmd, c_pairs, "out");
  std::string pairs_data;
  bool pairs_all = false;
  pairs_cmd->add_option("--data", pairs_data, "Dataset container")->required()->check(CLI::ExistingFile);
  pairs_cmd->add_flag("--all", pairs_all, "Enumerate every pair instead of sampling");

  auto* train = app.add_subcommand("train", "Train MRAI-net on a dataset with pairs");
  add_common(train, c_train, "out");
  std::string train_data;
  train->add_option("--data", train_data, "Dataset container (pairs sampled if absent)")
      ->required()
      ->check(CLI::ExistingFile);

  auto* feat = app.add_subcommand("features", "Extract feature vectors for every patch");
  add_common(feat, c_feat, "out");
  std::string feat_model, feat_data;
  feat->add_option("--model", feat_model, "Weight file")->required()->check(CLI::ExistingFile);
  feat->add_option("--data", feat_data, "Dataset container")->required()->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("evaluate", "Feature SVM tissue error and proxy A-distance");
  add_common(eval, c_eval, "out");
  std::string eval_model, eval_data, eval_test;
  eval->add_option("--model", eval_model, "Weight file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "Training dataset")->required()->check(CLI::ExistingFile);
  eval->add_option("--test", eval_test, "Held-out target dataset")->required()->check(CLI::ExistingFile);

  auto* curve = app.add_subcommand("curve", "Run the full learning-curve experiment");
  add_common(curve, c_curve, "out");
  bool curve_no_plots = false;
  curve->add_flag("--no-plots", curve_no_plots, "Skip dA.svg and error.svg");

  auto* plot = app.add_subcommand("plot", "Draw dA.svg and error.svg from a curve CSV");
  add_common(plot, c_plot, "out");
  std::string plot_csv;
  plot->add_option("--csv", plot_csv, "curve.csv")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      const auto cfg = load_config(c_sim);
      const auto dir = out_dir(c_sim, "out");
      const SubjectData data = simulate_repetition(cfg, sim_rep);
      const auto labeled = draw_target_labels(
          cfg, data, sim_n, derive_seed(cell_seed(cfg.master_seed, sim_rep, sim_n), 1));
      write_dataset(dir / "dataset.mrds", Dataset{data.source, labeled, std::nullopt});
      write_dataset(dir / "test.mrds", Dataset{{}, data.test, std::nullopt});
      KeyValues meta = config_to_key_values(cfg);
      const ProtocolPair p = cfg.resolved_protocols();
      describe_protocol(meta, "resolved.source", p.source);
      describe_protocol(meta, "resolved.target", p.target);
      meta["dataset.repetition"] = std::to_string(sim_rep);
      meta["dataset.target_labels_per_tissue"] = std::to_string(sim_n);
      meta["dataset.source_patches"] = std::to_string(data.source.size());
      meta["dataset.target_patches"] = std::to_string(labeled.size());
      meta["dataset.test_patches"] = std::to_string(data.test.size());
      write_key_values(dir / "dataset.meta", meta, "simulation settings");
      log(c_sim, "wrote " + (dir / "dataset.mrds").string() + " (" +
                     std::to_string(data.source.size()) + " source, " +
                     std::to_string(labeled.size()) + " target) and " +
                     (dir / "test.mrds").string() + " (" + std::to_string(data.test.size()) +
                     " held-out)");
    } else if (pairs_cmd->parsed()) {
      const auto cfg = load_config(c_pairs);
      const auto dir = out_dir(c_pairs, "out");
      Dataset d = read_dataset(pairs_data);
      d.pairs = pairs_all ? enumerate_pairs(d.source, d.target)
                          : sample_pairs(d.source, d.target, cfg.pair_budget,
                                         cfg.similar_fraction, derive_seed(cfg.master_seed, 2));
      if (d.pairs->exhausted) log(c_pairs, "warning: fewer pairs exist than the budget asked for");
      write_dataset(dir / "pairs.mrds", d);
      std::string counts;
      for (std::size_t t = 0; t < kPairTypeCount; ++t) {
        counts += " " + pair_type_name(PairType(t)) + "=" + std::to_string(d.pairs->type_counts[t]);
      }
      log(c_pairs, "wrote " + std::to_string(d.pairs->size()) + " pairs:" + counts);
    } else if (train->parsed()) {
      const auto cfg = load_config(c_train);
      const auto dir = out_dir(c_train, "out");
      Dataset d = read_dataset(train_data);
      if (!d.pairs) {
        d.pairs = sample_pairs(d.source, d.target, cfg.pair_budget, cfg.similar_fraction,
                               derive_seed(cfg.master_seed, 2));
      }
      SiameseConfig sc = cfg.siamese;
      sc.seed = derive_seed(cfg.master_seed, 3);
      const auto t0 = std::chrono::steady_clock::now();
      const auto res = train_mrainet(d.source, d.target, *d.pairs, sc,
                                     [&](std::size_t e, const TrainHistory& h) {
                                       if (c_train.verbosity() == Verbosity::verbose) {
                                         std::cerr << "epoch " << e + 1 << " loss "
                                                   << h.loss.back() << " sim "
                                                   << h.mean_similar_distance.back() << " dis "
                                                   << h.mean_dissimilar_distance.back() << "\n";
                                       }
                                     });
      save_params(dir / "model.mrnw", res.params);
      write_history_csv(dir / "history.csv", res.history);
      KeyValues meta;
      meta["siamese.margin"] = format_double(sc.margin);
      meta["siamese.epochs"] = std::to_string(sc.epochs);
      meta["siamese.batch_size"] = std::to_string(sc.batch_size);
      meta["siamese.out_dim"] = std::to_string(sc.out_dim);
      meta["siamese.dropout"] = format_double(sc.dropout);
      meta["siamese.lr"] = format_double(sc.optimizer.learning_rate);
      meta["siamese.rho"] = format_double(sc.optimizer.rho);
      meta["siamese.epsilon"] = format_double(sc.optimizer.epsilon);
      meta["siamese.seed"] = std::to_string(sc.seed);
      meta["pairs.count"] = std::to_string(d.pairs->size());
      write_key_values(dir / "model.meta", meta, "MRAI-net training settings");
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log(c_train, "trained on " + std::to_string(d.pairs->size()) + " pairs in " +
                       std::to_string(secs) + " s; wrote " + (dir / "model.mrnw").string());
    } else if (feat->parsed()) {
      const auto dir = out_dir(c_feat, "out");
      const auto params = load_params(feat_model);
      const Dataset d = read_dataset(feat_data);
      const auto all = pooled(d);
      write_features_csv(dir / "features.csv", all, extract_features(params, all));
      log(c_feat, "wrote " + (dir / "features.csv").string());
    } else if (eval->parsed()) {
      const auto cfg = load_config(c_eval);
      const auto dir = out_dir(c_eval, "out");
      const auto params = load_params(eval_model);
      const Dataset d = read_dataset(eval_data);
      const Dataset t = read_dataset(eval_test);
      const auto train_patches = pooled(d);
      const auto test_patches = pooled(t);
      const FeatureMatrix f_train = extract_features(params, train_patches);
      const FeatureMatrix f_test = extract_features(params, test_patches);
      const auto svm = train_linear_svm(f_train, tissue_labels(train_patches), cfg.svm,
                                        derive_seed(cfg.master_seed, 4));
      CurveResult r;
      CellResult cell;
      cell.ok = true;
      cell.n = d.target.size() / kBrainTissues.size();
      cell.seed = cfg.master_seed;
      cell.error_mrai = tissue_error(svm, f_test, tissue_labels(test_patches));
      cell.raw = proxy_a_distance(patch_matrix(d.source), patch_matrix(test_patches), cfg.adist,
                                  derive_seed(cfg.master_seed, 30));
      cell.mrai = proxy_a_distance(extract_features(params, d.source), f_test, cfg.adist,
                                   derive_seed(cfg.master_seed, 8));
      // Only the mrai and d_A rows carry measurements here.
      std::istringstream rows(curve_csv(CurveResult{{cell}}));
      std::ofstream out(dir / "eval.csv", std::ios::binary);
      std::string line;
      while (std::getline(rows, line)) {
        if (line.rfind("source,", 0) == 0 || line.rfind("target,", 0) == 0) continue;
        out << line << "\n";
      }
      log(c_eval, "mrai tissue error " + format_double(cell.error_mrai) + ", d_A before " +
                      format_double(cell.raw.distance) + ", after " +
                      format_double(cell.mrai.distance));
    } else if (curve->parsed()) {
      const auto cfg = load_config(c_curve);
      const auto dir = out_dir(c_curve, "out");
      write_key_values(dir / "curve.cfg", config_to_key_values(cfg), "effective configuration");
      const auto result = run_experiment(cfg, [&](const CellResult& r) {
        if (c_curve.verbosity() == Verbosity::quiet) return;
        std::cerr << "rep " << r.repetition << " n=" << r.n;
        if (r.ok) {
          std::cerr << " source=" << r.error_source << " target=" << r.error_target
                    << " mrai=" << r.error_mrai << " dA " << r.raw.distance << " -> "
                    << r.mrai.distance;
        } else {
          std::cerr << " FAILED: " << r.failure;
        }
        if (c_curve.verbosity() == Verbosity::verbose) std::cerr << " (" << r.seconds << " s)";
        std::cerr << "\n";
      });
      write_curve_csv(dir / "curve.csv", result);
      if (!curve_no_plots) {
        for (const auto& w : emit_plots(result, dir)) log(c_curve, "warning: " + w);
      }
      std::size_t failed = 0;
      for (const auto& r : result.cells) failed += !r.ok;
      log(c_curve, "wrote " + (dir / "curve.csv").string() +
                       (failed ? " with " + std::to_string(failed) + " failed cells" : ""));
    } else if (plot->parsed()) {
      const auto dir = out_dir(c_plot, "out");
      for (const auto& w : emit_plots(read_curve_csv(plot_csv), dir)) log(c_plot, "warning: " + w);
      log(c_plot, "wrote " + (dir / "dA.svg").string() + " and " + (dir / "error.svg").string());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
