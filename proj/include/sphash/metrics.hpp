#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace sphash {

/// Fraction of queries whose true nearest database index appears among the first N results.
/// `ranked[q]` must hold at least N entries.
double recall_at(std::span<const std::vector<std::uint32_t>> ranked, std::span<const std::int32_t> first_neighbour,
                 std::size_t N);

}  // namespace sphash
