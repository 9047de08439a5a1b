#pragma once

#include "sphash/data_io.hpp"
#include "sphash/network.hpp"
#include "sphash/synthetic.hpp"
#include "sphash/training.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sphash {

inline const std::vector<std::string> kKnownMethods = {"proposed", "proposed-noquant", "lsh", "itq", "pq"};

struct BenchmarkConfig {
  /// Empty: draw everything from the synthetic mixture.
  std::filesystem::path base_path;
  /// Optional separate training file, used when train_source == "learn".
  std::filesystem::path learn_path;
  std::string train_source = "base";
  MixtureConfig synthetic;
  SplitSizes split{5000, 1000, 10000};

  std::vector<std::string> methods = {"proposed", "lsh", "itq", "pq"};
  std::vector<int> bits = {16, 32, 64, 128};
  /// Bit budget -> (M, K) for the proposed method.
  std::map<int, std::pair<int, int>> grid = {{16, {4, 16}}, {32, {8, 16}}, {64, {8, 256}}, {128, {16, 256}}};
  std::vector<std::size_t> recall_ns = {1, 10, 100};

  TrainingConfig training;
  int itq_iterations = 50;
  int kmeans_iterations = 25;
  int pq_centroids = 256;

  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "bench_out";
  /// When false, timing columns are written as 0 so reruns give identical files.
  bool timing = true;
  bool parallel = false;
  /// Store trained models under output_dir/models.
  bool save_models = false;

  void validate() const;
};

/// Reads a JSON config; every key is optional and unknown keys are rejected.
BenchmarkConfig parse_benchmark_config(const std::string& json_text);
BenchmarkConfig load_benchmark_config(const std::filesystem::path& path);
std::string benchmark_config_json(const BenchmarkConfig& config);

struct BenchmarkData {
  DatasetSplit split;
  /// Query -> database neighbours, nearest first.
  NeighbourTable ground_truth;
};

BenchmarkData prepare_benchmark_data(const BenchmarkConfig& config, std::size_t ground_truth_k = 100);

struct RecallCell {
  std::string method;
  int bits = 0;
  int M = 0;
  int K = 0;
  std::vector<std::pair<std::size_t, double>> recall;
  double encode_time_ms = 0;
  double scan_time_ms = 0;
  /// Per-block code histogram entropy on the database, proposed methods only.
  std::vector<double> code_entropy;
  std::optional<std::string> error;

  std::optional<double> recall_at_n(std::size_t n) const;
};

struct RecallReport {
  std::vector<RecallCell> cells;

  const RecallCell* find(const std::string& method, int bits) const;
};

/// Seed for one (method, bits) cell; independent of which other cells run.
std::uint64_t cell_seed(std::uint64_t seed, const std::string& method, int bits);

RecallCell run_cell(const BenchmarkConfig& config, const BenchmarkData& data, const std::string& method, int bits,
                    std::ostream* progress = nullptr);

/// Runs every (method, bits) cell. A failing cell records its error and the rest still run.
RecallReport run_benchmark(const BenchmarkConfig& config, const BenchmarkData& data, std::ostream* progress = nullptr);

std::string bench_csv_header();
void write_bench_csv(std::ostream& out, const RecallReport& report);
std::string report_json(const RecallReport& report);

/// Writes bench.csv and bench.json into config.output_dir.
void write_benchmark_artifacts(const BenchmarkConfig& config, const RecallReport& report);

/// Projection of one block's quantiser rows (and optionally embedding blocks) onto two coordinate axes.
struct BlockProjection {
  int block = 0;
  int axis_i = 0;
  int axis_j = 0;
  std::vector<std::pair<double, double>> rows;
  std::vector<std::pair<double, double>> embeddings;
};

/// Per block: up to `per_block` randomly chosen W rows and `y` blocks, projected on two random distinct axes.
std::vector<BlockProjection> export_weight_projections(const ModelParams& model, const Matrix* y, std::size_t per_block,
                                                       std::uint64_t seed);

/// Columns block,axis_i,axis_j,w_x,w_y.
void write_weight_projections_csv(std::ostream& out, const std::vector<BlockProjection>& projections);
/// Columns block,axis_i,axis_j,y_x,y_y.
void write_embedding_projections_csv(std::ostream& out, const std::vector<BlockProjection>& projections);

}  // namespace sphash
