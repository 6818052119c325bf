#pragma once

// Similarity-labeled patch pairs over a pooled source + target patch store.
// Pooled index i < n_source refers to source[i]; otherwise target[i - n_source].

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mrai/phantom.hpp"

namespace mrai {

enum class PairType : std::uint8_t {
  aa_same = 0,
  ab_same = 1,
  bb_same = 2,
  aa_diff = 3,
  ab_diff = 4,
  bb_diff = 5,
};

inline constexpr std::size_t kPairTypeCount = 6;
std::string pair_type_name(PairType t);

struct PatchPair {
  std::uint32_t index_a = 0;
  std::uint32_t index_b = 0;
  std::uint8_t y = 0;
  PairType type = PairType::aa_same;

  friend bool operator==(const PatchPair&, const PatchPair&) = default;
};

struct PairSet {
  std::size_t n_source = 0;
  std::size_t n_target = 0;
  std::vector<PatchPair> pairs;
  std::array<std::uint64_t, kPairTypeCount> type_counts{};
  /// Set by sample_pairs when fewer pairs existed than the budget asked for.
  bool exhausted = false;

  std::size_t size() const noexcept { return pairs.size(); }
  std::size_t similar_count() const;
  std::size_t dissimilar_count() const;

  friend bool operator==(const PairSet&, const PairSet&) = default;
};

/// The combination count as printed:
///   sum_k (N_k + M_k)^2 + sum_{k<l} (N_k N_l + N_k M_l + M_k M_l).
/// It counts ordered pairs including self-pairs in the first term and drops
/// the M_k N_l cross term, so it is not the size of enumerate_pairs().
std::uint64_t count_pairs_paper(std::span<const std::uint64_t> n_source,
                                std::span<const std::uint64_t> n_target);

/// Size of enumerate_pairs() for the given per-tissue counts:
///   sum_k C(N_k + M_k, 2) + sum_{k<l} (N_k + M_k)(N_l + M_l).
std::uint64_t count_pairs_unordered(std::span<const std::uint64_t> n_source,
                                    std::span<const std::uint64_t> n_target);

PairType classify_pair(ScannerId a, ScannerId b, bool same_tissue);

/// Every unordered, non-self pair over the pooled patches.
PairSet enumerate_pairs(std::span<const Patch> source,
                        std::span<const Patch> target);

/// Stratified sample without replacement. The similar quota
/// round(budget * similar_fraction) is split evenly over the non-empty similar
/// types, the remainder over the non-empty dissimilar types; shortfalls in one
/// stratum are handed to the others of the same polarity and then to the
/// opposite polarity. Pairs are returned sorted by (index_a, index_b).
PairSet sample_pairs(std::span<const Patch> source,
                     std::span<const Patch> target, std::size_t budget,
                     double similar_fraction, std::uint64_t seed);

}  // namespace mrai
