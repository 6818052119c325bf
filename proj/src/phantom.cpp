#include "mrai/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mrai/rng.hpp"

namespace mrai {

std::string tissue_name(Tissue t) {
  switch (t) {
    case Tissue::background: return "BG";
    case Tissue::csf: return "CSF";
    case Tissue::gray_matter: return "GM";
    case Tissue::white_matter: return "WM";
  }
  return "?";
}

Tissue parse_tissue(const std::string& name) {
  std::string n;
  for (char c : name) n.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (n == "BG" || n == "BACKGROUND") return Tissue::background;
  if (n == "CSF") return Tissue::csf;
  if (n == "GM" || n == "GRAY_MATTER" || n == "GREY_MATTER") return Tissue::gray_matter;
  if (n == "WM" || n == "WHITE_MATTER") return Tissue::white_matter;
  throw PhantomError("unknown tissue name '" + name + "'");
}

TissueExhaustedError::TissueExhaustedError(Tissue t, std::size_t requested,
                                           std::size_t available)
    : std::runtime_error("tissue exhausted: " + tissue_name(t) + " has " +
                         std::to_string(available) +
                         " candidate patch centers, " +
                         std::to_string(requested) + " requested"),
      tissue_(t) {}

std::size_t LabelMap::count(Tissue t) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), t));
}

void TissueParams::validate() const {
  for (std::size_t i = 0; i < kTissueCount; ++i) {
    const auto& p = tissues[i];
    const std::string name = tissue_name(static_cast<Tissue>(i));
    if (!(p.t1_ms > 0.0) || !(p.t2star_ms > 0.0)) {
      throw PhantomError(name + ": T1 and T2* must be positive");
    }
    if (!(p.proton_density >= 0.0 && p.proton_density <= 1.0)) {
      throw PhantomError(name + ": proton density must lie in [0, 1]");
    }
  }
  if ((*this)[Tissue::background].proton_density != 0.0) {
    throw PhantomError("background proton density must be 0");
  }
}

void ScannerProtocol::validate() const {
  if (!(flip_angle_deg > 0.0 && flip_angle_deg <= 90.0)) {
    throw PhantomError(name + ": flip angle must lie in (0, 90] degrees");
  }
  if (!(te_ms > 0.0 && tr_ms > te_ms)) {
    throw PhantomError(name + ": require TR > TE > 0");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw PhantomError(name + ": noise sigma must be finite and >= 0");
  }
  tissue_params.validate();
}

double ScannerProtocol::max_tissue_signal() const {
  double m = 0.0;
  for (const auto& t : tissue_params.tissues) {
    m = std::max(m, spoiled_gre_signal(t, flip_angle_deg, tr_ms, te_ms));
  }
  return m;
}

double spoiled_gre_signal(const TissueNmr& tissue, double flip_angle_deg,
                          double tr_ms, double te_ms) {
  const double a = flip_angle_deg * std::numbers::pi / 180.0;
  const double e1 = std::exp(-tr_ms / tissue.t1_ms);
  const double e2 = std::exp(-te_ms / tissue.t2star_ms);
  return tissue.proton_density * std::sin(a) * (1.0 - e1) * e2 /
         (1.0 - std::cos(a) * e1);
}

std::vector<double> Scan::normalized() const {
  std::vector<double> out(image.size(), 0.0);
  if (image.empty()) return out;
  const auto [lo, hi] = std::minmax_element(image.begin(), image.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < image.size(); ++i) {
    out[i] = (image[i] - *lo) / range;
  }
  // Guard the exact endpoints against rounding in the division.
  out[static_cast<std::size_t>(lo - image.begin())] = 0.0;
  out[static_cast<std::size_t>(hi - image.begin())] = 1.0;
  return out;
}

namespace {

// Smooth random closed-curve perturbation r(phi) = sum_h c_h cos(h phi + p_h)
// with amplitude falling off as 1/h.
struct Wobble {
  std::vector<double> amp;
  std::vector<double> phase;
  int h_min = 2;

  Wobble(Rng& rng, double amplitude, int h_min_, int h_max) : h_min(h_min_) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 2.0 * std::numbers::pi);
    for (int h = h_min_; h <= h_max; ++h) {
      amp.push_back(gauss(rng) * amplitude / h);
      phase.push_back(uni(rng));
    }
  }

  double operator()(double phi) const {
    double v = 0.0;
    for (std::size_t i = 0; i < amp.size(); ++i) {
      v += amp[i] * std::cos(double(h_min + int(i)) * phi + phase[i]);
    }
    return v;
  }
};

}  // namespace

LabelMap generate_phantom(std::uint64_t seed, std::size_t size,
                          std::int32_t subject_id, const PhantomShape& shape) {
  if (size < 2 * kPatchSize + 1) {
    throw PhantomError("phantom size " + std::to_string(size) +
                       " cannot fit a " + std::to_string(kPatchSize) + "x" +
                       std::to_string(kPatchSize) +
                       " patch inside each tissue region (need >= " +
                       std::to_string(2 * kPatchSize + 1) + ")");
  }
  Rng rng(seed);
  const Wobble outer(rng, shape.boundary_wobble, 2, 5);
  const Wobble rim(rng, 0.3, 2, 4);
  const Wobble inner(rng, 0.5, 3, 9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  struct Ellipse {
    double cx, cy, a, b;
  };
  std::array<Ellipse, 2> ventricles{};
  for (int s = 0; s < 2; ++s) {
    const double side = s == 0 ? -1.0 : 1.0;
    ventricles[s].cx = side * (0.05 + 0.02 * (u(rng) - 0.5));
    ventricles[s].cy = 0.06 * (u(rng) - 0.5);
    ventricles[s].a = (0.03 + 0.01 * u(rng)) * shape.ventricle_scale;
    ventricles[s].b = (0.08 + 0.02 * u(rng)) * shape.ventricle_scale;
  }

  LabelMap map;
  map.width = size;
  map.height = size;
  map.subject_id = subject_id;
  map.labels.assign(size * size, Tissue::white_matter);
  const double c = (double(size) - 1.0) / 2.0;
  for (std::size_t row = 0; row < size; ++row) {
    for (std::size_t col = 0; col < size; ++col) {
      const double dx = (double(col) - c) / double(size);
      const double dy = (double(row) - c) / double(size);
      const double r = std::hypot(dx * 0.95, dy * 0.8);
      const double phi = std::atan2(dy, dx);
      const double r_brain = shape.brain_radius * (1.0 + outer(phi));
      const double r_csf = r_brain - shape.csf_rim * (1.0 + rim(phi));
      const double r_gm = r_csf - shape.gm_band * (1.0 + inner(phi));
      Tissue t = Tissue::white_matter;
      if (r > r_brain) {
        t = Tissue::background;
      } else if (r > r_csf) {
        t = Tissue::csf;
      } else if (r > r_gm) {
        t = Tissue::gray_matter;
      } else {
        for (const auto& e : ventricles) {
          const double ex = (dx - e.cx) / e.a;
          const double ey = (dy - e.cy) / e.b;
          if (ex * ex + ey * ey < 1.0) t = Tissue::csf;
        }
      }
      map.labels[row * size + col] = t;
    }
  }
  for (Tissue t : {Tissue::background, Tissue::csf, Tissue::gray_matter,
                   Tissue::white_matter}) {
    if (map.count(t) == 0) {
      throw PhantomError("phantom of size " + std::to_string(size) +
                         " lost tissue " + tissue_name(t) +
                         "; increase the size");
    }
  }
  return map;
}

Scan simulate_scan(const LabelMap& map, const ScannerProtocol& protocol,
                   ScannerId scanner, std::uint64_t seed) {
  protocol.validate();
  if (map.labels.size() != map.width * map.height || map.width == 0) {
    throw PhantomError("label map dimensions do not match its pixel count");
  }
  std::array<double, kTissueCount> level{};
  for (std::size_t i = 0; i < kTissueCount; ++i) {
    level[i] = spoiled_gre_signal(protocol.tissue_params.tissues[i],
                                  protocol.flip_angle_deg, protocol.tr_ms,
                                  protocol.te_ms);
  }
  Scan scan;
  scan.width = map.width;
  scan.height = map.height;
  scan.scanner = scanner;
  scan.subject_id = map.subject_id;
  scan.protocol_name = protocol.name;
  scan.image.resize(map.labels.size());
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < map.labels.size(); ++i) {
    double v = level[static_cast<std::size_t>(map.labels[i])];
    if (protocol.noise_sigma > 0.0) v += protocol.noise_sigma * noise(rng);
    scan.image[i] = v;
  }
  return scan;
}

ProtocolPair default_protocols() {
  ProtocolPair p;
  p.source.name = "brainweb1.5T";
  p.source.field_strength_t = 1.5;
  p.source.flip_angle_deg = 20.0;
  p.source.tr_ms = 13.8;
  p.source.te_ms = 2.8;

  p.target.name = "brainweb3.0T";
  p.target.field_strength_t = 3.0;
  p.target.flip_angle_deg = 90.0;
  p.target.tr_ms = 7.9;
  p.target.te_ms = 4.5;

  // Background carries no signal; its relaxation constants are placeholders.
  auto& s = p.source.tissue_params;
  s[Tissue::background] = {1000.0, 50.0, 0.0};
  s[Tissue::csf] = {1800.0, 200.0, 1.0};
  s[Tissue::gray_matter] = {900.0, 70.0, 0.80};
  s[Tissue::white_matter] = {600.0, 55.0, 0.60};

  auto& t = p.target.tissue_params;
  t[Tissue::background] = {1000.0, 50.0, 0.0};
  t[Tissue::csf] = {4000.0, 150.0, 1.0};
  t[Tissue::gray_matter] = {1400.0, 50.0, 0.80};
  t[Tissue::white_matter] = {850.0, 45.0, 0.60};

  const double floor =
      0.01 * std::max(p.source.max_tissue_signal(), p.target.max_tissue_signal());
  p.source.noise_sigma = floor;
  p.target.noise_sigma = floor;
  return p;
}

std::array<std::size_t, kTissueCount> candidate_centers(const LabelMap& map) {
  std::array<std::size_t, kTissueCount> counts{};
  if (map.width < kPatchSize || map.height < kPatchSize) return counts;
  for (std::size_t row = kPatchRadius; row + kPatchRadius < map.height; ++row) {
    for (std::size_t col = kPatchRadius; col + kPatchRadius < map.width; ++col) {
      ++counts[static_cast<std::size_t>(map.at(row, col))];
    }
  }
  return counts;
}

std::vector<Patch> extract_patches(const Scan& scan, const LabelMap& map,
                                   std::size_t n_per_tissue,
                                   const std::vector<Tissue>& tissues,
                                   std::uint64_t seed) {
  if (scan.width != map.width || scan.height != map.height) {
    throw PhantomError("scan and label map dimensions differ");
  }
  const std::vector<double> norm = scan.normalized();
  Rng rng(seed);
  std::vector<Patch> out;
  out.reserve(n_per_tissue * tissues.size());
  for (Tissue t : tissues) {
    std::vector<std::uint32_t> centers;
    for (std::size_t row = kPatchRadius; row + kPatchRadius < map.height; ++row) {
      for (std::size_t col = kPatchRadius; col + kPatchRadius < map.width; ++col) {
        if (map.at(row, col) == t) {
          centers.push_back(static_cast<std::uint32_t>(row * map.width + col));
        }
      }
    }
    if (centers.size() < n_per_tissue) {
      throw TissueExhaustedError(t, n_per_tissue, centers.size());
    }
    // Partial Fisher-Yates: the first n entries are a uniform sample without
    // replacement.
    for (std::size_t i = 0; i < n_per_tissue; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, centers.size() - 1);
      std::swap(centers[i], centers[pick(rng)]);
      const std::size_t row = centers[i] / map.width;
      const std::size_t col = centers[i] % map.width;
      Patch p;
      p.tissue = t;
      p.scanner = scan.scanner;
      p.subject_id = scan.subject_id;
      p.center_row = static_cast<std::int32_t>(row);
      p.center_col = static_cast<std::int32_t>(col);
      for (std::size_t y = 0; y < kPatchSize; ++y) {
        for (std::size_t x = 0; x < kPatchSize; ++x) {
          p.pixels[y * kPatchSize + x] = static_cast<float>(
              norm[(row + y - kPatchRadius) * map.width + (col + x - kPatchRadius)]);
        }
      }
      out.push_back(p);
    }
  }
  return out;
}

}  // namespace mrai
