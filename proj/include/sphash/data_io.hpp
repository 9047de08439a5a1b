#pragma once

#include "sphash/codec.hpp"
#include "sphash/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace sphash {

/// Row-major set of equal-length vectors. Byte-valued inputs are widened to float.
struct VectorSet {
  Eigen::Index dim = 0;
  RowMatrixX<float> data;

  Eigen::Index count() const { return data.rows(); }
  bool empty() const { return data.rows() == 0; }

  /// Gathers the given rows into a new set.
  VectorSet subset(std::span<const std::size_t> rows) const;
};

/// Per-query database indices, sorted by ascending distance.
struct NeighbourTable {
  std::vector<std::vector<std::int32_t>> rows;

  std::size_t size() const { return rows.size(); }
  /// Row length; 0 for an empty table. Throws if rows are ragged.
  std::size_t k() const;
};

VectorSet parse_fvecs(std::span<const std::uint8_t> bytes);
VectorSet parse_bvecs(std::span<const std::uint8_t> bytes);
NeighbourTable parse_ivecs(std::span<const std::uint8_t> bytes);

VectorSet read_fvecs(const std::filesystem::path& path);
VectorSet read_bvecs(const std::filesystem::path& path);
NeighbourTable read_ivecs(const std::filesystem::path& path);

/// Dispatches on the file extension (.fvecs or .bvecs).
VectorSet read_vectors(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_fvecs(const VectorSet& set);
std::vector<std::uint8_t> serialize_bvecs(const VectorSet& set);
std::vector<std::uint8_t> serialize_ivecs(const NeighbourTable& table);

void write_fvecs(const std::filesystem::path& path, const VectorSet& set);
void write_bvecs(const std::filesystem::path& path, const VectorSet& set);
void write_ivecs(const std::filesystem::path& path, const NeighbourTable& table);

/// Exact k nearest database rows per query under Euclidean distance.
/// Ties go to the lower database index. Queries are split across `threads` workers.
NeighbourTable brute_force_neighbours(const VectorSet& queries, const VectorSet& database,
                                      std::size_t k, unsigned threads = 0);

/// k nearest neighbours of every row within the same set, excluding the row itself.
NeighbourTable self_neighbours(const VectorSet& set, std::size_t k, unsigned threads = 0);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t query = 0;
  std::size_t database = 0;
};

struct DatasetSplit {
  VectorSet train;
  VectorSet query;
  VectorSet database;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> query_rows;
  std::vector<std::size_t> database_rows;
};

/// Disjoint random partition of `set`, deterministic in `seed`.
DatasetSplit split_dataset(const VectorSet& set, const SplitSizes& sizes, std::uint64_t seed);

std::vector<std::uint8_t> serialize_code_database(const CodeDatabase& db);
CodeDatabase parse_code_database(std::span<const std::uint8_t> bytes);
void write_code_database(const std::filesystem::path& path, const CodeDatabase& db);
CodeDatabase read_code_database(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace sphash
