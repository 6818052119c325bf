#pragma once

// Binary dataset container, model weight files and key=value text files.
//
// Dataset container (little-endian):
//   "MRAIDSET" | u32 version | u64 patch count | u32 patch size
//   per patch: f32[size*size] pixels | i32 tissue | i32 scanner | i32 subject
//              | i32 center row | i32 center col
//   optional:  "MRAIPAIR" | u64 pair count | per pair: u32 a | u32 b | u8 y | u8 type
//              | u8 exhausted flag
// Source patches are stored before target patches, so pair indices refer to
// the same pooled order used by the pair engine.
//
// Weight file (little-endian):
//   "MRAINETW" | u32 version | u32 channels | u32 height | u32 width
//   | u32 layer count | per layer: u32 kind | u32 a | u32 b | u32 c | f64 rate
//   | u64 parameter count | f64[count] values

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrai/nn.hpp"
#include "mrai/pairs.hpp"
#include "mrai/phantom.hpp"

namespace mrai {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kWeightsVersion = 1;

struct Dataset {
  std::vector<Patch> source;
  std::vector<Patch> target;
  std::optional<PairSet> pairs;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);

void save_params(const std::filesystem::path& path, const nn::NetworkParams& params);
nn::NetworkParams load_params(const std::filesystem::path& path);

/// Ordered key=value text. Lines starting with '#' and blank lines are
/// ignored; whitespace around keys and values is trimmed.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text, const std::string& origin = "<string>");
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const KeyValues& kv,
                      const std::string& header = {});

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

/// Sidecar describing a protocol pair, for dataset metadata files.
void describe_protocol(KeyValues& kv, const std::string& prefix, const ScannerProtocol& p);

}  // namespace mrai
