#include "mrai/pairs.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>
#include <unordered_set>

#include "mrai/rng.hpp"

namespace mrai {

std::string pair_type_name(PairType t) {
  switch (t) {
    case PairType::aa_same: return "AA-same";
    case PairType::ab_same: return "AB-same";
    case PairType::bb_same: return "BB-same";
    case PairType::aa_diff: return "AA-diff";
    case PairType::ab_diff: return "AB-diff";
    case PairType::bb_diff: return "BB-diff";
  }
  return "?";
}

std::size_t PairSet::similar_count() const {
  return static_cast<std::size_t>(
      std::count_if(pairs.begin(), pairs.end(), [](const PatchPair& p) { return p.y == 1; }));
}

std::size_t PairSet::dissimilar_count() const { return pairs.size() - similar_count(); }

namespace {

void check_lengths(std::span<const std::uint64_t> n, std::span<const std::uint64_t> m) {
  if (n.size() != m.size()) {
    throw std::invalid_argument("per-tissue count vectors differ in length (" +
                                std::to_string(n.size()) + " vs " +
                                std::to_string(m.size()) + ")");
  }
}

}  // namespace

std::uint64_t count_pairs_paper(std::span<const std::uint64_t> n,
                                std::span<const std::uint64_t> m) {
  check_lengths(n, m);
  std::uint64_t total = 0;
  for (std::size_t k = 0; k < n.size(); ++k) {
    total += (n[k] + m[k]) * (n[k] + m[k]);
  }
  for (std::size_t k = 0; k < n.size(); ++k) {
    for (std::size_t l = k + 1; l < n.size(); ++l) {
      total += n[k] * n[l] + n[k] * m[l] + m[k] * m[l];
    }
  }
  return total;
}

std::uint64_t count_pairs_unordered(std::span<const std::uint64_t> n,
                                    std::span<const std::uint64_t> m) {
  check_lengths(n, m);
  std::uint64_t total = 0;
  for (std::size_t k = 0; k < n.size(); ++k) {
    const std::uint64_t t = n[k] + m[k];
    total += t * (t - (t > 0 ? 1 : 0)) / 2;
    for (std::size_t l = k + 1; l < n.size(); ++l) {
      total += t * (n[l] + m[l]);
    }
  }
  return total;
}

PairType classify_pair(ScannerId a, ScannerId b, bool same) {
  const int n_target = (a == ScannerId::target) + (b == ScannerId::target);
  return static_cast<PairType>((same ? 0 : 3) + n_target);
}

namespace {

struct Pool {
  std::span<const Patch> source;
  std::span<const Patch> target;

  std::size_t size() const { return source.size() + target.size(); }
  const Patch& at(std::size_t i) const {
    return i < source.size() ? source[i] : target[i - source.size()];
  }
};

PatchPair make_pair(const Pool& pool, std::size_t i, std::size_t j) {
  if (j < i) std::swap(i, j);
  const Patch& a = pool.at(i);
  const Patch& b = pool.at(j);
  const bool same = a.tissue == b.tissue;
  return {static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
          static_cast<std::uint8_t>(same ? 1 : 0),
          classify_pair(i < pool.source.size() ? ScannerId::source : ScannerId::target,
                        j < pool.source.size() ? ScannerId::source : ScannerId::target,
                        same)};
}

void check_pool_size(const Pool& pool) {
  if (pool.size() > std::size_t{0xffffffffu}) {
    throw std::invalid_argument("too many patches for 32-bit pair indices");
  }
}

}  // namespace

PairSet enumerate_pairs(std::span<const Patch> source, std::span<const Patch> target) {
  const Pool pool{source, target};
  check_pool_size(pool);
  PairSet set;
  set.n_source = source.size();
  set.n_target = target.size();
  const std::size_t n = pool.size();
  set.pairs.reserve(n * (n - (n > 0 ? 1 : 0)) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const PatchPair p = make_pair(pool, i, j);
      ++set.type_counts[static_cast<std::size_t>(p.type)];
      set.pairs.push_back(p);
    }
  }
  return set;
}

namespace {

// Evenly spreads `quota` over strata with the given capacities; whatever the
// strata cannot absorb is returned.
std::uint64_t water_fill(std::uint64_t quota, const std::array<std::size_t, 3>& idx,
                         const std::array<std::uint64_t, kPairTypeCount>& capacity,
                         std::array<std::uint64_t, kPairTypeCount>& alloc) {
  while (quota > 0) {
    std::vector<std::size_t> open;
    for (std::size_t t : idx) {
      if (alloc[t] < capacity[t]) open.push_back(t);
    }
    if (open.empty()) break;
    const std::uint64_t share = quota / open.size();
    std::uint64_t extra = quota % open.size();
    std::uint64_t given = 0;
    for (std::size_t t : open) {
      std::uint64_t want = share + (extra > 0 ? 1 : 0);
      if (extra > 0) --extra;
      const std::uint64_t take = std::min(want, capacity[t] - alloc[t]);
      alloc[t] += take;
      given += take;
    }
    quota -= given;
    if (given == 0) break;
  }
  return quota;
}

// Candidate generator for one stratum: draws uniform unordered pairs from the
// scanner block the stratum lives in; callers reject the wrong tissue relation.
std::pair<std::size_t, std::size_t> draw_block(const Pool& pool, PairType type, Rng& rng) {
  const std::size_t ns = pool.source.size();
  const std::size_t nt = pool.target.size();
  const int kind = static_cast<int>(type) % 3;
  if (kind == 1) {
    std::uniform_int_distribution<std::size_t> ds(0, ns - 1);
    std::uniform_int_distribution<std::size_t> dt(0, nt - 1);
    const std::size_t i = ds(rng);
    return {i, ns + dt(rng)};
  }
  const std::size_t base = kind == 0 ? 0 : ns;
  const std::size_t n = kind == 0 ? ns : nt;
  std::uniform_int_distribution<std::size_t> d(0, n - 1);
  std::size_t i = d(rng);
  std::size_t j = d(rng);
  while (j == i) j = d(rng);
  return {base + std::min(i, j), base + std::max(i, j)};
}

}  // namespace

PairSet sample_pairs(std::span<const Patch> source, std::span<const Patch> target,
                     std::size_t budget, double similar_fraction, std::uint64_t seed) {
  if (budget < 2) throw std::invalid_argument("pair budget must be at least 2");
  if (!(similar_fraction > 0.0 && similar_fraction < 1.0)) {
    throw std::invalid_argument("similar_fraction must lie strictly between 0 and 1");
  }
  const Pool pool{source, target};
  check_pool_size(pool);

  // Stratum sizes from per-tissue counts.
  std::array<std::uint64_t, kTissueCount> ns{};
  std::array<std::uint64_t, kTissueCount> nt{};
  for (const Patch& p : source) ++ns[static_cast<std::size_t>(p.tissue)];
  for (const Patch& p : target) ++nt[static_cast<std::size_t>(p.tissue)];
  std::array<std::uint64_t, kPairTypeCount> capacity{};
  for (std::size_t k = 0; k < kTissueCount; ++k) {
    capacity[0] += ns[k] * (ns[k] - (ns[k] > 0 ? 1 : 0)) / 2;
    capacity[1] += ns[k] * nt[k];
    capacity[2] += nt[k] * (nt[k] - (nt[k] > 0 ? 1 : 0)) / 2;
    for (std::size_t l = 0; l < kTissueCount; ++l) {
      if (l == k) continue;
      capacity[4] += ns[k] * nt[l];
      if (l > k) {
        capacity[3] += ns[k] * ns[l];
        capacity[5] += nt[k] * nt[l];
      }
    }
  }

  const auto similar_quota =
      static_cast<std::uint64_t>(std::llround(double(budget) * similar_fraction));
  std::array<std::uint64_t, kPairTypeCount> alloc{};
  const std::array<std::size_t, 3> sim_idx{0, 1, 2};
  const std::array<std::size_t, 3> dis_idx{3, 4, 5};
  std::uint64_t left_sim = water_fill(similar_quota, sim_idx, capacity, alloc);
  std::uint64_t left_dis = water_fill(budget - similar_quota, dis_idx, capacity, alloc);
  left_dis = water_fill(left_dis + left_sim, dis_idx, capacity, alloc);
  left_sim = water_fill(left_dis, sim_idx, capacity, alloc);

  PairSet set;
  set.n_source = source.size();
  set.n_target = target.size();
  set.exhausted = left_sim > 0;

  for (std::size_t t = 0; t < kPairTypeCount; ++t) {
    if (alloc[t] == 0) continue;
    const auto type = static_cast<PairType>(t);
    Rng rng(derive_seed(seed, t));
    std::vector<PatchPair> chosen;
    if (alloc[t] * 2 > capacity[t]) {
      // Dense request: list the stratum and take a partial shuffle.
      const std::size_t n = pool.size();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
          const PatchPair p = make_pair(pool, i, j);
          if (p.type == type) chosen.push_back(p);
        }
      }
      for (std::size_t i = 0; i < alloc[t]; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, chosen.size() - 1);
        std::swap(chosen[i], chosen[pick(rng)]);
      }
      chosen.resize(alloc[t]);
    } else {
      std::unordered_set<std::uint64_t> seen;
      seen.reserve(alloc[t] * 2);
      while (chosen.size() < alloc[t]) {
        const auto [i, j] = draw_block(pool, type, rng);
        const PatchPair p = make_pair(pool, i, j);
        if (p.type != type) continue;
        if (!seen.insert((std::uint64_t(p.index_a) << 32) | p.index_b).second) continue;
        chosen.push_back(p);
      }
    }
    set.type_counts[t] = chosen.size();
    set.pairs.insert(set.pairs.end(), chosen.begin(), chosen.end());
  }
  std::sort(set.pairs.begin(), set.pairs.end(), [](const PatchPair& a, const PatchPair& b) {
    return a.index_a != b.index_a ? a.index_a < b.index_a : a.index_b < b.index_b;
  });
  return set;
}

}  // namespace mrai
