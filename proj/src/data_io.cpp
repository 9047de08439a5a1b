#include "sphash/data_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <thread>

namespace sphash {
namespace {

constexpr std::array<char, 4> kCodeMagic = {'S', 'P', 'H', '1'};

std::uint32_t load_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

void store_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

// Shared record walker for the three *vecs formats. `elem` is the per-component byte width.
template <typename Sink>
void walk_records(std::span<const std::uint8_t> bytes, std::size_t elem, Sink&& sink) {
  std::size_t pos = 0;
  std::int64_t dim = -1;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 4) throw FormatError("truncated record header", static_cast<std::int64_t>(pos));
    const auto d = static_cast<std::int32_t>(load_u32(bytes, pos));
    if (d <= 0) throw FormatError("non-positive dimension " + std::to_string(d), static_cast<std::int64_t>(pos));
    if (dim >= 0 && d != dim) {
      throw FormatError("inconsistent dimension " + std::to_string(d) + " (expected " + std::to_string(dim) + ")",
                        static_cast<std::int64_t>(pos));
    }
    dim = d;
    const std::size_t body = static_cast<std::size_t>(d) * elem;
    if (bytes.size() - pos - 4 < body) {
      throw FormatError("truncated record", static_cast<std::int64_t>(pos));
    }
    sink(bytes.subspan(pos + 4, body), static_cast<std::size_t>(d));
    pos += 4 + body;
  }
}

template <typename Decode>
VectorSet parse_vectors(std::span<const std::uint8_t> bytes, std::size_t elem, Decode&& decode) {
  std::vector<float> values;
  std::size_t dim = 0;
  walk_records(bytes, elem, [&](std::span<const std::uint8_t> rec, std::size_t d) {
    dim = d;
    for (std::size_t j = 0; j < d; ++j) values.push_back(decode(rec.subspan(j * elem, elem)));
  });
  VectorSet set;
  set.dim = static_cast<Eigen::Index>(dim);
  if (dim == 0) return set;
  const auto rows = static_cast<Eigen::Index>(values.size() / dim);
  set.data = Eigen::Map<const RowMatrixX<float>>(values.data(), rows, set.dim);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!set.data.row(i).allFinite()) {
      throw FormatError("non-finite value in record " + std::to_string(i),
                        static_cast<std::int64_t>(i * static_cast<Eigen::Index>(4 + dim * elem)));
    }
  }
  return set;
}

}  // namespace

VectorSet VectorSet::subset(std::span<const std::size_t> rows) const {
  VectorSet out;
  out.dim = dim;
  out.data.resize(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < static_cast<std::size_t>(count()), "VectorSet::subset: row out of range");
    out.data.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

std::size_t NeighbourTable::k() const {
  if (rows.empty()) return 0;
  const std::size_t k = rows.front().size();
  for (const auto& r : rows) require(r.size() == k, "NeighbourTable: rows have mixed lengths");
  return k;
}

VectorSet parse_fvecs(std::span<const std::uint8_t> bytes) {
  return parse_vectors(bytes, 4, [](std::span<const std::uint8_t> b) { return std::bit_cast<float>(load_u32(b, 0)); });
}

VectorSet parse_bvecs(std::span<const std::uint8_t> bytes) {
  return parse_vectors(bytes, 1, [](std::span<const std::uint8_t> b) { return static_cast<float>(b[0]); });
}

NeighbourTable parse_ivecs(std::span<const std::uint8_t> bytes) {
  NeighbourTable table;
  walk_records(bytes, 4, [&](std::span<const std::uint8_t> rec, std::size_t d) {
    auto& row = table.rows.emplace_back(d);
    for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<std::int32_t>(load_u32(rec, j * 4));
  });
  return table;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

VectorSet read_fvecs(const std::filesystem::path& path) { return parse_fvecs(read_file_bytes(path)); }
VectorSet read_bvecs(const std::filesystem::path& path) { return parse_bvecs(read_file_bytes(path)); }
NeighbourTable read_ivecs(const std::filesystem::path& path) { return parse_ivecs(read_file_bytes(path)); }

VectorSet read_vectors(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".fvecs") return read_fvecs(path);
  if (ext == ".bvecs") return read_bvecs(path);
  throw Error("unsupported vector file extension '" + ext + "' (expected .fvecs or .bvecs)");
}

std::vector<std::uint8_t> serialize_fvecs(const VectorSet& set) {
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(set.count() * (4 + 4 * set.dim)));
  for (Eigen::Index i = 0; i < set.count(); ++i) {
    store_u32(out, static_cast<std::uint32_t>(set.dim));
    for (Eigen::Index j = 0; j < set.dim; ++j) store_u32(out, std::bit_cast<std::uint32_t>(set.data(i, j)));
  }
  return out;
}

std::vector<std::uint8_t> serialize_bvecs(const VectorSet& set) {
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(set.count() * (4 + set.dim)));
  for (Eigen::Index i = 0; i < set.count(); ++i) {
    store_u32(out, static_cast<std::uint32_t>(set.dim));
    for (Eigen::Index j = 0; j < set.dim; ++j) {
      const float v = set.data(i, j);
      require(v >= 0.0F && v <= 255.0F && v == std::floor(v), "serialize_bvecs: value is not a byte");
      out.push_back(static_cast<std::uint8_t>(v));
    }
  }
  return out;
}

std::vector<std::uint8_t> serialize_ivecs(const NeighbourTable& table) {
  const std::size_t k = table.k();
  std::vector<std::uint8_t> out;
  out.reserve(table.size() * (4 + 4 * k));
  for (const auto& row : table.rows) {
    store_u32(out, static_cast<std::uint32_t>(k));
    for (std::int32_t v : row) store_u32(out, static_cast<std::uint32_t>(v));
  }
  return out;
}

void write_fvecs(const std::filesystem::path& path, const VectorSet& set) { write_file_bytes(path, serialize_fvecs(set)); }
void write_bvecs(const std::filesystem::path& path, const VectorSet& set) { write_file_bytes(path, serialize_bvecs(set)); }
void write_ivecs(const std::filesystem::path& path, const NeighbourTable& table) {
  write_file_bytes(path, serialize_ivecs(table));
}

namespace {

// Computes rows [begin, end) of the neighbour table; skip_self excludes the query's own index.
void scan_range(const VectorSet& queries, const VectorSet& database, std::size_t k, bool skip_self,
                std::size_t begin, std::size_t end, NeighbourTable& out) {
  const auto n = static_cast<std::size_t>(database.count());
  std::vector<double> dist(n);
  std::vector<std::uint32_t> order(n);
  const MatrixX<double> db = database.data.cast<double>().transpose();
  for (std::size_t q = begin; q < end; ++q) {
    const Vector query = queries.data.row(static_cast<Eigen::Index>(q)).cast<double>().transpose();
    for (std::size_t i = 0; i < n; ++i) dist[i] = (db.col(static_cast<Eigen::Index>(i)) - query).squaredNorm();
    if (skip_self) dist[q] = std::numeric_limits<double>::infinity();
    std::iota(order.begin(), order.end(), 0U);
    auto less = [&](std::uint32_t a, std::uint32_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), less);
    auto& row = out.rows[q];
    row.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  }
}

NeighbourTable parallel_scan(const VectorSet& queries, const VectorSet& database, std::size_t k, bool skip_self,
                             unsigned threads) {
  NeighbourTable table;
  table.rows.resize(static_cast<std::size_t>(queries.count()));
  const std::size_t nq = table.rows.size();
  if (threads == 0) threads = std::max(1U, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(nq, 1)));
  if (threads <= 1) {
    scan_range(queries, database, k, skip_self, 0, nq, table);
    return table;
  }
  std::vector<std::jthread> workers;
  const std::size_t chunk = (nq + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t b = t * chunk, e = std::min(nq, b + chunk);
    if (b >= e) break;
    workers.emplace_back([&, b, e] { scan_range(queries, database, k, skip_self, b, e, table); });
  }
  return table;
}

}  // namespace

NeighbourTable brute_force_neighbours(const VectorSet& queries, const VectorSet& database, std::size_t k,
                                      unsigned threads) {
  require(queries.count() == 0 || queries.dim == database.dim,
          "brute_force_neighbours: query dim " + std::to_string(queries.dim) + " != database dim " +
              std::to_string(database.dim));
  require(k >= 1 && k <= static_cast<std::size_t>(database.count()),
          "brute_force_neighbours: k=" + std::to_string(k) + " outside [1, " + std::to_string(database.count()) + "]");
  return parallel_scan(queries, database, k, false, threads);
}

NeighbourTable self_neighbours(const VectorSet& set, std::size_t k, unsigned threads) {
  require(k >= 1 && k < static_cast<std::size_t>(set.count()), "self_neighbours: k must be in [1, count)");
  return parallel_scan(set, set, k, true, threads);
}

DatasetSplit split_dataset(const VectorSet& set, const SplitSizes& sizes, std::uint64_t seed) {
  const std::size_t total = sizes.train + sizes.query + sizes.database;
  require(total <= static_cast<std::size_t>(set.count()),
          "split_dataset: requested " + std::to_string(total) + " rows from a set of " + std::to_string(set.count()));
  std::vector<std::size_t> perm(static_cast<std::size_t>(set.count()));
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  DatasetSplit split;
  auto take = [&](std::size_t from, std::size_t n) {
    return std::vector<std::size_t>(perm.begin() + static_cast<std::ptrdiff_t>(from),
                                    perm.begin() + static_cast<std::ptrdiff_t>(from + n));
  };
  split.train_rows = take(0, sizes.train);
  split.query_rows = take(sizes.train, sizes.query);
  split.database_rows = take(sizes.train + sizes.query, sizes.database);
  split.train = set.subset(split.train_rows);
  split.query = set.subset(split.query_rows);
  split.database = set.subset(split.database_rows);
  return split;
}

std::vector<std::uint8_t> serialize_code_database(const CodeDatabase& db) {
  require(db.payload.size() == db.count * db.code_bytes(), "CodeDatabase: payload size != count * bytes per code");
  std::vector<std::uint8_t> out(kCodeMagic.begin(), kCodeMagic.end());
  store_u32(out, static_cast<std::uint32_t>(db.M));
  store_u32(out, static_cast<std::uint32_t>(db.K));
  store_u32(out, static_cast<std::uint32_t>(db.count));
  out.insert(out.end(), db.payload.begin(), db.payload.end());
  return out;
}

CodeDatabase parse_code_database(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw FormatError("code database header truncated", static_cast<std::int64_t>(bytes.size()));
  if (!std::equal(kCodeMagic.begin(), kCodeMagic.end(), bytes.begin())) {
    throw FormatError("bad code database magic (expected SPH1)", 0);
  }
  CodeDatabase db;
  db.M = static_cast<int>(load_u32(bytes, 4));
  db.K = static_cast<int>(load_u32(bytes, 8));
  db.count = load_u32(bytes, 12);
  if (db.M < 1 || db.K < 2) throw FormatError("invalid M/K in code database header", 4);
  const std::size_t expected = db.count * db.code_bytes();
  if (bytes.size() - 16 != expected) {
    throw FormatError("code database payload is " + std::to_string(bytes.size() - 16) + " bytes, expected " +
                          std::to_string(expected),
                      16);
  }
  db.payload.assign(bytes.begin() + 16, bytes.end());
  // Every stored index must be < K.
  for (std::size_t i = 0; i < db.count; ++i) {
    try {
      (void)db.code(i);
    } catch (const ContractError& e) {
      throw FormatError(std::string("code database: ") + e.what(),
                        static_cast<std::int64_t>(16 + i * db.code_bytes()));
    }
  }
  return db;
}

void write_code_database(const std::filesystem::path& path, const CodeDatabase& db) {
  write_file_bytes(path, serialize_code_database(db));
}

CodeDatabase read_code_database(const std::filesystem::path& path) {
  return parse_code_database(read_file_bytes(path));
}

}  // namespace sphash
