#pragma once

// Procedural brain phantoms, spoiled gradient-echo scan simulation and
// labeled patch extraction.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mrai {

enum class Tissue : std::uint8_t { background = 0, csf = 1, gray_matter = 2, white_matter = 3 };

inline constexpr std::size_t kTissueCount = 4;
inline constexpr std::array<Tissue, 3> kBrainTissues = {
    Tissue::csf, Tissue::gray_matter, Tissue::white_matter};

std::string tissue_name(Tissue t);
/// Accepts "BG"/"background", "CSF", "GM"/"gray_matter", "WM"/"white_matter".
Tissue parse_tissue(const std::string& name);

enum class ScannerId : std::uint8_t { source = 0, target = 1 };

inline constexpr std::size_t kPatchSize = 15;
inline constexpr std::size_t kPatchPixels = kPatchSize * kPatchSize;
inline constexpr std::size_t kPatchRadius = kPatchSize / 2;

class PhantomError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a tissue has fewer candidate patch centers than requested.
class TissueExhaustedError : public std::runtime_error {
 public:
  TissueExhaustedError(Tissue t, std::size_t requested, std::size_t available);
  Tissue tissue() const noexcept { return tissue_; }

 private:
  Tissue tissue_;
};

struct LabelMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Tissue> labels;  // row-major
  std::int32_t subject_id = 0;

  Tissue at(std::size_t row, std::size_t col) const {
    return labels[row * width + col];
  }
  std::size_t count(Tissue t) const;
};

struct TissueNmr {
  double t1_ms = 1000.0;
  double t2star_ms = 50.0;
  double proton_density = 0.0;
};

/// Per-tissue relaxation constants, indexed by Tissue.
struct TissueParams {
  std::array<TissueNmr, kTissueCount> tissues{};

  const TissueNmr& operator[](Tissue t) const {
    return tissues[static_cast<std::size_t>(t)];
  }
  TissueNmr& operator[](Tissue t) { return tissues[static_cast<std::size_t>(t)]; }

  /// Throws PhantomError unless T1 > 0, T2* > 0, PD in [0, 1], background PD 0.
  void validate() const;
};

struct ScannerProtocol {
  std::string name;
  double field_strength_t = 1.5;
  double flip_angle_deg = 20.0;
  double tr_ms = 13.8;
  double te_ms = 2.8;
  double noise_sigma = 0.0;
  TissueParams tissue_params;

  /// Throws PhantomError unless 0 < flip <= 90, TR > TE > 0, sigma >= 0.
  void validate() const;
  /// Largest noiseless tissue signal over all tissues.
  double max_tissue_signal() const;
};

/// S = PD sin(a) (1 - E1) E2 / (1 - cos(a) E1), E1 = exp(-TR/T1),
/// E2 = exp(-TE/T2*).
double spoiled_gre_signal(const TissueNmr& tissue, double flip_angle_deg,
                          double tr_ms, double te_ms);

struct Scan {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> image;  // raw simulated intensities, row-major
  ScannerId scanner = ScannerId::source;
  std::int32_t subject_id = 0;
  std::string protocol_name;

  /// Min-max normalized copy of the image (all zeros for a constant image).
  std::vector<double> normalized() const;
};

struct Patch {
  std::array<float, kPatchPixels> pixels{};  // row-major, normalized to [0, 1]
  Tissue tissue = Tissue::background;
  ScannerId scanner = ScannerId::source;
  std::int32_t subject_id = 0;
  std::int32_t center_row = 0;
  std::int32_t center_col = 0;

  friend bool operator==(const Patch&, const Patch&) = default;
};

/// Geometry knobs of the procedural phantom, as fractions of the image size.
struct PhantomShape {
  double brain_radius = 0.42;
  double csf_rim = 0.045;
  double gm_band = 0.08;
  double ventricle_scale = 1.0;
  double boundary_wobble = 0.04;
};

/// Nested-region brain: background exterior, CSF rim, gray-matter band with a
/// wobbling inner boundary, white-matter core and two CSF ventricles. Each
/// subject gets its own random boundary perturbations from `seed`.
LabelMap generate_phantom(std::uint64_t seed, std::size_t size,
                          std::int32_t subject_id,
                          const PhantomShape& shape = {});

Scan simulate_scan(const LabelMap& map, const ScannerProtocol& protocol,
                   ScannerId scanner, std::uint64_t seed);

struct ProtocolPair {
  ScannerProtocol source;
  ScannerProtocol target;
};

/// 1.5T (20 deg, TR 13.8 ms, TE 2.8 ms) and 3.0T (90 deg, TR 7.9 ms,
/// TE 4.5 ms) gradient-echo protocols with the default tissue tables. Both
/// share one receiver noise floor: 1% of the largest noiseless tissue signal
/// over the pair.
ProtocolPair default_protocols();

/// Samples exactly n_per_tissue patches per requested tissue, centers drawn
/// uniformly without replacement among pixels whose window fits the image.
/// Intensities are min-max normalized over the whole scan.
std::vector<Patch> extract_patches(const Scan& scan, const LabelMap& map,
                                   std::size_t n_per_tissue,
                                   const std::vector<Tissue>& tissues,
                                   std::uint64_t seed);

/// Number of valid patch centers of each tissue.
std::array<std::size_t, kTissueCount> candidate_centers(const LabelMap& map);

}  // namespace mrai
