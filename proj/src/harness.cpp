#include "mrai/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "mrai/pairs.hpp"
#include "mrai/rng.hpp"

namespace mrai {

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw FormatError("invalid experiment config: " + m); };
  if (grid.empty()) fail("grid is empty");
  if (repetitions == 0) fail("repetitions must be >= 1");
  if (source_subjects == 0) fail("need at least one source subject");
  if (target_train_subjects == 0) fail("need at least one target training subject");
  if (heldout_subjects == 0) fail("need at least one held-out target subject");
  if (source_patches_per_tissue == 0 || test_patches_per_tissue == 0) {
    fail("patch counts must be >= 1");
  }
  for (std::size_t n : grid) {
    if (n == 0) fail("grid entries must be >= 1");
  }
  if (pair_budget < 2) fail("pairs.budget must be >= 2");
  if (!(similar_fraction > 0.0 && similar_fraction < 1.0)) {
    fail("pairs.similar_fraction must lie in (0, 1)");
  }
  if (!(noise_floor_fraction >= 0.0)) fail("noise.floor_fraction must be >= 0");
  if (adist.folds < 2) fail("adist.folds must be >= 2");
  siamese.validate();
  protocols.source.validate();
  protocols.target.validate();
}

ProtocolPair ExperimentConfig::resolved_protocols() const {
  ProtocolPair p = protocols;
  const double floor =
      noise_floor_fraction *
      std::max(p.source.max_tissue_signal(), p.target.max_tissue_signal());
  p.source.noise_sigma = source_noise_sigma.value_or(floor);
  p.target.noise_sigma = target_noise_sigma.value_or(floor);
  return p;
}

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) {
    throw FormatError("config key '" + key + "': cannot parse '" + v + "' as a number");
  }
  return out;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b == std::string::npos) throw FormatError("config key '" + key + "': empty list item");
    out.push_back(parse_number<std::size_t>(key, item.substr(b, e - b + 1)));
  }
  return out;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

// One binding per config key: how to read it into and write it out of the
// config struct.
struct Binding {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::optional<std::string>(const ExperimentConfig&)> get;
};

template <class Get>
Binding size_key(Get field) {
  return {[field](ExperimentConfig& c, const std::string& k, const std::string& v) {
            field(c) = parse_number<std::size_t>(k, v);
          },
          [field](const ExperimentConfig& c) -> std::optional<std::string> {
            return std::to_string(field(const_cast<ExperimentConfig&>(c)));
          }};
}

template <class Get>
Binding real_key(Get field) {
  return {[field](ExperimentConfig& c, const std::string& k, const std::string& v) {
            field(c) = parse_number<double>(k, v);
          },
          [field](const ExperimentConfig& c) -> std::optional<std::string> {
            return format_double(field(const_cast<ExperimentConfig&>(c)));
          }};
}

std::map<std::string, Binding> bindings() {
  std::map<std::string, Binding> b;
  b["seed"] = {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
                 c.master_seed = parse_number<std::uint64_t>(k, v);
               },
               [](const ExperimentConfig& c) -> std::optional<std::string> {
                 return std::to_string(c.master_seed);
               }};
  b["grid"] = {[](ExperimentConfig& c, const std::string& k, const std::string& v) {
                 c.grid = parse_list(k, v);
               },
               [](const ExperimentConfig& c) -> std::optional<std::string> { return join(c.grid); }};
  b["phantom.size"] = size_key([](ExperimentConfig& c) -> std::size_t& { return c.phantom_size; });
  b["phantom.brain_radius"] = real_key([](ExperimentConfig& c) -> double& { return c.shape.brain_radius; });
  b["phantom.csf_rim"] = real_key([](ExperimentConfig& c) -> double& { return c.shape.csf_rim; });
  b["phantom.gm_band"] = real_key([](ExperimentConfig& c) -> double& { return c.shape.gm_band; });
  b["phantom.ventricle_scale"] =
      real_key([](ExperimentConfig& c) -> double& { return c.shape.ventricle_scale; });
  b["phantom.boundary_wobble"] =
      real_key([](ExperimentConfig& c) -> double& { return c.shape.boundary_wobble; });
  b["subjects.source"] = size_key([](ExperimentConfig& c) -> std::size_t& { return c.source_subjects; });
  b["subjects.target_train"] =
      size_key([](ExperimentConfig& c) -> std::size_t& { return c.target_train_subjects; });
  b["subjects.heldout"] = size_key([](ExperimentConfig& c) -> std::size_t& { return c.heldout_subjects; });
  b["patches.source_per_tissue"] =
      size_key([](ExperimentConfig& c) -> std::size_t& { return c.source_patches_per_tissue; });
  b["patches.test_per_tissue"] =
      size_key([](ExperimentConfig& c) -> std::size_t& { return c.test_patches_per_tissue; });
  b["repetitions"] = size_key([](ExperimentConfig& c) -> std::size_t& { return c.repetitions; });
  b["workers"] = size_key([](ExperimentConfig& c) -> std::size_t& { return c.workers; });
  b["pairs.budget"] = size_key([](ExperimentConfig& c) -> std::size_t& { return c.pair_budget; });
  b["pairs.similar_fraction"] =
      real_key([](ExperimentConfig& c) -> double& { return c.similar_fraction; });
  b["siamese.margin"] = real_key([](ExperimentConfig& c) -> double& { return c.siamese.margin; });
  b["siamese.epochs"] = size_key([](ExperimentConfig& c) -> std::size_t& { return c.siamese.epochs; });
  b["siamese.batch_size"] =
      size_key([](ExperimentConfig& c) -> std::size_t& { return c.siamese.batch_size; });
  b["siamese.out_dim"] = size_key([](ExperimentConfig& c) -> std::size_t& { return c.siamese.out_dim; });
  b["siamese.dropout"] = real_key([](ExperimentConfig& c) -> double& { return c.siamese.dropout; });
  b["siamese.lr"] =
      real_key([](ExperimentConfig& c) -> double& { return c.siamese.optimizer.learning_rate; });
  b["siamese.rho"] = real_key([](ExperimentConfig& c) -> double& { return c.siamese.optimizer.rho; });
  b["siamese.epsilon"] =
      real_key([](ExperimentConfig& c) -> double& { return c.siamese.optimizer.epsilon; });
  b["cnn.epochs"] = size_key([](ExperimentConfig& c) -> std::size_t& { return c.cnn.epochs; });
  b["cnn.batch_size"] = size_key([](ExperimentConfig& c) -> std::size_t& { return c.cnn.batch_size; });
  b["cnn.dropout"] = real_key([](ExperimentConfig& c) -> double& { return c.cnn.dropout; });
  b["cnn.lr"] = real_key([](ExperimentConfig& c) -> double& { return c.cnn.optimizer.learning_rate; });
  b["cnn.rho"] = real_key([](ExperimentConfig& c) -> double& { return c.cnn.optimizer.rho; });
  b["cnn.epsilon"] = real_key([](ExperimentConfig& c) -> double& { return c.cnn.optimizer.epsilon; });
  b["svm.c"] = real_key([](ExperimentConfig& c) -> double& { return c.svm.c; });
  b["svm.max_epochs"] = size_key([](ExperimentConfig& c) -> std::size_t& { return c.svm.max_epochs; });
  b["svm.tolerance"] = real_key([](ExperimentConfig& c) -> double& { return c.svm.tolerance; });
  b["adist.folds"] = size_key([](ExperimentConfig& c) -> std::size_t& { return c.adist.folds; });
  b["adist.max_per_side"] =
      size_key([](ExperimentConfig& c) -> std::size_t& { return c.adist.max_per_side; });
  b["adist.svm.c"] = real_key([](ExperimentConfig& c) -> double& { return c.adist.svm.c; });
  b["noise.floor_fraction"] =
      real_key([](ExperimentConfig& c) -> double& { return c.noise_floor_fraction; });

  for (int side = 0; side < 2; ++side) {
    const std::string p = side == 0 ? "source" : "target";
    auto proto = [side](ExperimentConfig& c) -> ScannerProtocol& {
      return side == 0 ? c.protocols.source : c.protocols.target;
    };
    b[p + ".name"] = {[proto](ExperimentConfig& c, const std::string&, const std::string& v) {
                        proto(c).name = v;
                      },
                      [proto](const ExperimentConfig& c) -> std::optional<std::string> {
                        return proto(const_cast<ExperimentConfig&>(c)).name;
                      }};
    b[p + ".field_strength_t"] =
        real_key([proto](ExperimentConfig& c) -> double& { return proto(c).field_strength_t; });
    b[p + ".flip_angle_deg"] =
        real_key([proto](ExperimentConfig& c) -> double& { return proto(c).flip_angle_deg; });
    b[p + ".tr_ms"] = real_key([proto](ExperimentConfig& c) -> double& { return proto(c).tr_ms; });
    b[p + ".te_ms"] = real_key([proto](ExperimentConfig& c) -> double& { return proto(c).te_ms; });
    b[p + ".noise_sigma"] = {
        [side](ExperimentConfig& c, const std::string& k, const std::string& v) {
          (side == 0 ? c.source_noise_sigma : c.target_noise_sigma) = parse_number<double>(k, v);
        },
        [side](const ExperimentConfig& c) -> std::optional<std::string> {
          const auto& s = side == 0 ? c.source_noise_sigma : c.target_noise_sigma;
          if (!s) return std::nullopt;
          return format_double(*s);
        }};
    for (Tissue t : {Tissue::csf, Tissue::gray_matter, Tissue::white_matter}) {
      const std::string base = p + "." + tissue_name(t);
      b[base + ".t1_ms"] =
          real_key([proto, t](ExperimentConfig& c) -> double& { return proto(c).tissue_params[t].t1_ms; });
      b[base + ".t2star_ms"] = real_key(
          [proto, t](ExperimentConfig& c) -> double& { return proto(c).tissue_params[t].t2star_ms; });
      b[base + ".pd"] = real_key(
          [proto, t](ExperimentConfig& c) -> double& { return proto(c).tissue_params[t].proton_density; });
    }
  }
  return b;
}

}  // namespace

ExperimentConfig config_from_key_values(const KeyValues& kv, ExperimentConfig base) {
  const auto b = bindings();
  for (const auto& [k, v] : kv) {
    const auto it = b.find(k);
    if (it == b.end()) throw FormatError("unknown config key '" + k + "'");
    it->second.set(base, k, v);
  }
  base.validate();
  return base;
}

KeyValues config_to_key_values(const ExperimentConfig& c) {
  KeyValues kv;
  for (const auto& [k, binding] : bindings()) {
    if (auto v = binding.get(c)) kv[k] = *v;
  }
  return kv;
}

std::uint64_t repetition_seed(std::uint64_t master, std::size_t repetition) {
  return derive_seed(master, 0x5245500000000000ULL + repetition);
}

std::uint64_t cell_seed(std::uint64_t master, std::size_t repetition, std::size_t n) {
  return derive_seed(repetition_seed(master, repetition), 20, n);
}

SubjectData simulate_repetition(const ExperimentConfig& c, std::size_t repetition) {
  const std::uint64_t rs = repetition_seed(c.master_seed, repetition);
  const ProtocolPair protocols = c.resolved_protocols();
  const std::vector<Tissue> tissues(kBrainTissues.begin(), kBrainTissues.end());
  SubjectData d;
  std::int32_t subject = 0;
  auto make = [&](const ScannerProtocol& p, ScannerId id, LabelMap& map) {
    map = generate_phantom(derive_seed(rs, 10, std::uint64_t(subject)), c.phantom_size, subject,
                           c.shape);
    return simulate_scan(map, p, id, derive_seed(rs, 11, std::uint64_t(subject)));
  };
  for (std::size_t s = 0; s < c.source_subjects; ++s, ++subject) {
    LabelMap map;
    const Scan scan = make(protocols.source, ScannerId::source, map);
    auto p = extract_patches(scan, map, c.source_patches_per_tissue, tissues,
                             derive_seed(rs, 12, std::uint64_t(subject)));
    d.source.insert(d.source.end(), p.begin(), p.end());
  }
  for (std::size_t s = 0; s < c.target_train_subjects; ++s, ++subject) {
    LabelMap map;
    d.target_scans.push_back(make(protocols.target, ScannerId::target, map));
    d.target_maps.push_back(std::move(map));
  }
  for (std::size_t s = 0; s < c.heldout_subjects; ++s, ++subject) {
    LabelMap map;
    const Scan scan = make(protocols.target, ScannerId::target, map);
    auto p = extract_patches(scan, map, c.test_patches_per_tissue, tissues,
                             derive_seed(rs, 12, std::uint64_t(subject)));
    d.test.insert(d.test.end(), p.begin(), p.end());
  }
  return d;
}

std::vector<Patch> draw_target_labels(const ExperimentConfig& c, const SubjectData& data,
                                      std::size_t n, std::uint64_t seed) {
  (void)c;
  // Split n per tissue across the training subjects; earlier subjects take
  // the remainder.
  std::vector<Patch> out;
  const std::size_t k = data.target_scans.size();
  for (Tissue t : kBrainTissues) {
    for (std::size_t s = 0; s < k; ++s) {
      const std::size_t take = n / k + (s < n % k ? 1 : 0);
      if (take == 0) continue;
      auto p = extract_patches(data.target_scans[s], data.target_maps[s], take, {t},
                               derive_seed(seed, static_cast<std::uint64_t>(t), s));
      out.insert(out.end(), p.begin(), p.end());
    }
  }
  return out;
}

CellResult run_cell(const ExperimentConfig& c, std::size_t repetition, std::size_t n) {
  CellResult r;
  r.repetition = repetition;
  r.n = n;
  r.seed = repetition_seed(c.master_seed, repetition);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const std::uint64_t cs = cell_seed(c.master_seed, repetition, n);
    const SubjectData data = simulate_repetition(c, repetition);
    const std::vector<Patch> labeled = draw_target_labels(c, data, n, derive_seed(cs, 1));

    const FeatureMatrix test_x = patch_matrix(data.test);
    const std::vector<int> test_y = tissue_labels(data.test);

    // MRAI-net, then a linear SVM on source + labeled target features.
    const PairSet pairs =
        sample_pairs(data.source, labeled, c.pair_budget, c.similar_fraction, derive_seed(cs, 2));
    SiameseConfig sc = c.siamese;
    sc.seed = derive_seed(cs, 3);
    const SiameseResult net = train_mrainet(data.source, labeled, pairs, sc);
    r.history = net.history;
    const FeatureMatrix f_source = extract_features(net.params, data.source);
    const FeatureMatrix f_labeled = extract_features(net.params, labeled);
    const FeatureMatrix f_test = extract_features(net.params, test_x);
    FeatureMatrix f_train(f_source.rows + f_labeled.rows, f_source.cols);
    std::copy(f_source.data.begin(), f_source.data.end(), f_train.data.begin());
    std::copy(f_labeled.data.begin(), f_labeled.data.end(),
              f_train.data.begin() + std::ptrdiff_t(f_source.data.size()));
    std::vector<int> y_train = tissue_labels(data.source);
    const auto y_labeled = tissue_labels(labeled);
    y_train.insert(y_train.end(), y_labeled.begin(), y_labeled.end());
    const LinearModel svm = train_linear_svm(f_train, y_train, c.svm, derive_seed(cs, 4));
    r.error_mrai = tissue_error(svm, f_test, test_y);

    // SOURCE baseline: source patches plus the labeled target patches.
    FeatureMatrix x_source = patch_matrix(data.source);
    const FeatureMatrix x_labeled = patch_matrix(labeled);
    FeatureMatrix x_both(x_source.rows + x_labeled.rows, kPatchPixels);
    std::copy(x_source.data.begin(), x_source.data.end(), x_both.data.begin());
    std::copy(x_labeled.data.begin(), x_labeled.data.end(),
              x_both.data.begin() + std::ptrdiff_t(x_source.data.size()));
    const CnnClassifier cnn_s = train_cnn_classifier(x_both, y_train, c.cnn, derive_seed(cs, 5));
    r.error_source = tissue_error(cnn_s, test_x, test_y);

    // TARGET baseline: labeled target patches only.
    const CnnClassifier cnn_t =
        train_cnn_classifier(x_labeled, y_labeled, c.cnn, derive_seed(cs, 6));
    r.error_target = tissue_error(cnn_t, test_x, test_y);

    // Scanner discrimination before (raw patches) and after (features). The
    // raw measurement uses a repetition-level seed so it is shared across n.
    r.raw = proxy_a_distance(x_source, test_x, c.adist, derive_seed(r.seed, 30));
    r.mrai = proxy_a_distance(f_source, f_test, c.adist, derive_seed(cs, 8));
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.failure = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::vector<CellResult> run_cells(const ExperimentConfig& c,
                                  const std::vector<std::pair<std::size_t, std::size_t>>& cells,
                                  const ProgressFn& progress) {
  c.validate();
  std::vector<CellResult> results(cells.size());
  std::size_t workers = c.workers == 0 ? std::thread::hardware_concurrency() : c.workers;
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, cells.size()));
  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      results[i] = run_cell(c, cells[i].first, cells[i].second);
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(results[i]);
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return results;
}

CurveResult run_experiment(const ExperimentConfig& c, const ProgressFn& progress) {
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (std::size_t rep = 0; rep < c.repetitions; ++rep) {
    for (std::size_t n : c.grid) cells.emplace_back(rep, n);
  }
  return CurveResult{run_cells(c, cells, progress)};
}

std::string curve_csv(const CurveResult& curve) {
  std::ostringstream os;
  os << kCurveHeader << "\n";
  for (const CellResult& r : curve.cells) {
    const std::string head = std::to_string(r.n) + "," + std::to_string(r.seed) + ",";
    auto val = [&](double v) { return r.ok ? format_double(v) : std::string("failed"); };
    os << "source," << head << ",," << val(r.error_source) << "\n";
    os << "target," << head << ",," << val(r.error_target) << "\n";
    os << "mrai," << head << ",," << val(r.error_mrai) << "\n";
    os << "dA_raw," << head << val(r.raw.error) << "," << val(r.raw.distance) << ",\n";
    os << "dA_mrai," << head << val(r.mrai.error) << "," << val(r.mrai.distance) << ",\n";
  }
  return os.str();
}

void write_curve_csv(const std::filesystem::path& path, const CurveResult& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out << curve_csv(curve);
  if (!out) throw FormatError("write to '" + path.string() + "' failed");
}

CurveResult read_curve_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kCurveHeader) {
    throw FormatError("'" + path.string() + "' does not start with the curve header");
  }
  CurveResult curve;
  std::map<std::pair<std::uint64_t, std::size_t>, std::size_t> index;
  std::map<std::uint64_t, std::size_t> reps;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 6) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 6 columns");
    }
    const auto n = parse_number<std::size_t>("n_target_labels", f[1]);
    const auto seed = parse_number<std::uint64_t>("seed", f[2]);
    const auto key = std::make_pair(seed, n);
    if (!index.count(key)) {
      index[key] = curve.cells.size();
      CellResult r;
      r.n = n;
      r.seed = seed;
      r.ok = true;
      if (!reps.count(seed)) reps.emplace(seed, reps.size());
      r.repetition = reps[seed];
      curve.cells.push_back(r);
    }
    CellResult& r = curve.cells[index[key]];
    auto num = [&](const std::string& s, const char* what) {
      if (s == "failed") {
        r.ok = false;
        return 0.0;
      }
      return parse_number<double>(what, s);
    };
    const std::string& m = f[0];
    if (m == "source") r.error_source = num(f[5], "tissue_error");
    else if (m == "target") r.error_target = num(f[5], "tissue_error");
    else if (m == "mrai") r.error_mrai = num(f[5], "tissue_error");
    else if (m == "dA_raw") r.raw = {num(f[3], "e_scanner"), num(f[4], "d_A")};
    else if (m == "dA_mrai") r.mrai = {num(f[3], "e_scanner"), num(f[4], "d_A")};
    else throw FormatError(path.string() + ":" + std::to_string(lineno) + ": unknown model '" + m + "'");
  }
  return curve;
}

namespace {

struct Series {
  std::string name;
  std::string color;
  std::vector<double> x, mean, sd;
};

std::string svg_number(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << v;
  return os.str();
}

std::string line_chart(const std::vector<Series>& series, const std::string& title,
                       const std::string& ylabel, double ymax) {
  const double w = 520, h = 360, left = 64, right = 120, top = 36, bottom = 52;
  const double pw = w - left - right, ph = h - top - bottom;
  double xmin = 1e300, xmax = -1e300;
  for (const auto& s : series) {
    for (double x : s.x) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
    }
  }
  const double lx0 = std::log10(xmin);
  const double lx1 = std::max(std::log10(xmax), lx0 + 1e-9);
  auto px = [&](double x) { return left + pw * (std::log10(x) - lx0) / (lx1 - lx0); };
  auto py = [&](double y) { return top + ph * (1.0 - std::clamp(y / ymax, 0.0, 1.0)); };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << " " << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << left + pw / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
     << title << "</text>\n";
  // Axes, y ticks and decade x ticks.
  os << "<g stroke=\"black\" fill=\"none\"><path d=\"M" << left << " " << top << " V" << top + ph
     << " H" << left + pw << "\"/></g>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = ymax * i / 4.0;
    os << "<line x1=\"" << left - 4 << "\" y1=\"" << svg_number(py(y)) << "\" x2=\"" << left
       << "\" y2=\"" << svg_number(py(y)) << "\" stroke=\"black\"/>"
       << "<text x=\"" << left - 8 << "\" y=\"" << svg_number(py(y) + 4)
       << "\" text-anchor=\"end\">" << svg_number(y) << "</text>\n";
  }
  std::set<double> xs;
  for (const auto& s : series) xs.insert(s.x.begin(), s.x.end());
  for (double x : xs) {
    std::ostringstream label;
    label << x;
    os << "<line x1=\"" << svg_number(px(x)) << "\" y1=\"" << top + ph << "\" x2=\""
       << svg_number(px(x)) << "\" y2=\"" << top + ph + 4 << "\" stroke=\"black\"/>"
       << "<text x=\"" << svg_number(px(x)) << "\" y=\"" << top + ph + 18
       << "\" text-anchor=\"middle\">" << label.str() << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10
     << "\" text-anchor=\"middle\">labeled target patches per tissue (log scale)</text>\n"
     << "<text transform=\"translate(16 " << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << ylabel << "</text>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const Series& s = series[si];
    os << "<g class=\"series\" data-name=\"" << s.name << "\" stroke=\"" << s.color
       << "\" fill=\"none\">\n<polyline points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      os << (i ? " " : "") << svg_number(px(s.x[i])) << "," << svg_number(py(s.mean[i]));
    }
    os << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double x = px(s.x[i]);
      os << "<line x1=\"" << svg_number(x) << "\" y1=\"" << svg_number(py(s.mean[i] - s.sd[i]))
         << "\" x2=\"" << svg_number(x) << "\" y2=\"" << svg_number(py(s.mean[i] + s.sd[i]))
         << "\"/><circle cx=\"" << svg_number(x) << "\" cy=\"" << svg_number(py(s.mean[i]))
         << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
    }
    os << "</g>\n";
    const double ly = top + 12 + 18.0 * double(si);
    os << "<g class=\"legend\"><line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\""
       << left + pw + 32 << "\" y2=\"" << ly << "\" stroke=\"" << s.color
       << "\" stroke-width=\"2\"/><text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">"
       << s.name << "</text></g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

Series summarize(const CurveResult& curve, const std::string& name, const std::string& color,
                 const std::function<double(const CellResult&)>& field,
                 std::vector<std::string>* warnings) {
  std::map<std::size_t, std::vector<double>> by_n;
  std::set<std::size_t> all_n;
  for (const auto& r : curve.cells) {
    all_n.insert(r.n);
    if (r.ok) by_n[r.n].push_back(field(r));
  }
  Series s{name, color, {}, {}, {}};
  for (std::size_t n : all_n) {
    const auto it = by_n.find(n);
    if (it == by_n.end()) {
      if (warnings) warnings->push_back("n=" + std::to_string(n) + ": no completed repetitions, omitted");
      continue;
    }
    const auto& v = it->second;
    double m = 0.0;
    for (double x : v) m += x;
    m /= double(v.size());
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    s.x.push_back(double(n));
    s.mean.push_back(m);
    s.sd.push_back(v.size() > 1 ? std::sqrt(var / double(v.size() - 1)) : 0.0);
  }
  return s;
}

}  // namespace

std::vector<std::string> emit_plots(const CurveResult& curve, const std::filesystem::path& out_dir) {
  if (curve.cells.empty()) throw std::invalid_argument("cannot plot an empty curve");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw FormatError("cannot create '" + out_dir.string() + "': " + ec.message());
  std::vector<std::string> warnings;

  const std::vector<Series> da{
      summarize(curve, "before", "#c0392b", [](const CellResult& r) { return r.raw.distance; },
                &warnings),
      summarize(curve, "after", "#2e6fba", [](const CellResult& r) { return r.mrai.distance; },
                nullptr)};
  const std::vector<Series> err{
      summarize(curve, "source", "#c0392b", [](const CellResult& r) { return r.error_source; },
                nullptr),
      summarize(curve, "target", "#27ae60", [](const CellResult& r) { return r.error_target; },
                nullptr),
      summarize(curve, "mrai", "#2e6fba", [](const CellResult& r) { return r.error_mrai; },
                nullptr)};

  for (const auto& [file, text] :
       {std::pair{"dA.svg", line_chart(da, "Proxy A-distance, source vs target", "d_A", 2.0)},
        std::pair{"error.svg", line_chart(err, "Tissue classification error", "error", 1.0)}}) {
    std::ofstream out(out_dir / file, std::ios::binary);
    if (!out) throw FormatError("cannot write '" + (out_dir / file).string() + "'");
    out << text;
  }
  return warnings;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& h) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out << "epoch,loss,mean_sim_dist,mean_dis_dist\n";
  for (std::size_t i = 0; i < h.epochs(); ++i) {
    out << i + 1 << "," << format_double(h.loss[i]) << ","
        << format_double(h.mean_similar_distance[i]) << ","
        << format_double(h.mean_dissimilar_distance[i]) << "\n";
  }
}

std::filesystem::path output_root(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("MRAI_OUT_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return fallback;
}

}  // namespace mrai
