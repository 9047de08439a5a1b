#include "sphash/metrics.hpp"

#include "sphash/types.hpp"

#include <algorithm>
#include <string>

namespace sphash {

double recall_at(std::span<const std::vector<std::uint32_t>> ranked, std::span<const std::int32_t> first_neighbour,
                 std::size_t N) {
  require(N >= 1, "recall_at: N must be positive");
  require(ranked.size() == first_neighbour.size(),
          "recall_at: " + std::to_string(ranked.size()) + " result lists but " +
              std::to_string(first_neighbour.size()) + " ground-truth entries");
  if (ranked.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < ranked.size(); ++q) {
    require(ranked[q].size() >= N, "recall_at: result list " + std::to_string(q) + " is shorter than N");
    require(first_neighbour[q] >= 0, "recall_at: missing ground truth for query " + std::to_string(q));
    const auto target = static_cast<std::uint32_t>(first_neighbour[q]);
    const auto end = ranked[q].begin() + static_cast<std::ptrdiff_t>(N);
    if (std::find(ranked[q].begin(), end, target) != end) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ranked.size());
}

}  // namespace sphash
