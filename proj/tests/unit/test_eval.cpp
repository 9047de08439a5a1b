#include "sphash/benchmark.hpp"
#include "sphash/metrics.hpp"

#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

using namespace sphash;

namespace {

BenchmarkConfig small_config() {
  BenchmarkConfig c;
  c.synthetic.dim = 16;
  c.synthetic.clusters = 4;
  c.synthetic.intrinsic_dim = 3;
  c.split = {300, 20, 400};
  c.methods = {"lsh"};
  c.bits = {16};
  c.recall_ns = {1, 10, 100};
  c.seed = 4;
  c.timing = false;
  c.training.epochs = 1;
  c.training.network.hidden_width = 16;
  c.training.batch_size = 32;
  return c;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("recall_at: examples and errors") {
  const std::vector<std::vector<std::uint32_t>> ranked{{3, 1, 2}, {0, 4, 5}};
  const std::vector<std::int32_t> truth{3, 0};
  CHECK(recall_at(ranked, truth, 1) == 1.0);
  const std::vector<std::int32_t> never{9, 9};
  CHECK(recall_at(ranked, never, 3) == 0.0);
  const std::vector<std::int32_t> second{1, 5};
  CHECK(recall_at(ranked, second, 1) == 0.0);
  CHECK(recall_at(ranked, second, 2) == 0.5);
  CHECK(recall_at(ranked, second, 3) == 1.0);
  CHECK_THROWS_AS(recall_at(ranked, truth, 4), ContractError);
  const std::vector<std::int32_t> missing{3, -1};
  CHECK_THROWS_AS(recall_at(ranked, missing, 1), ContractError);
}

TEST_CASE("recall_at: random ranking sits at N / count") {
  std::mt19937_64 rng(3);
  std::vector<std::uint32_t> all(10000);
  std::iota(all.begin(), all.end(), 0u);
  std::vector<std::vector<std::uint32_t>> ranked;
  std::vector<std::int32_t> truth;
  std::uniform_int_distribution<std::int32_t> pick(0, 9999);
  for (int q = 0; q < 1000; ++q) {
    // A random ranking's top 10: a uniform 10-subset.
    for (std::size_t i = 0; i < 10; ++i) std::swap(all[i], all[std::uniform_int_distribution<std::size_t>(i, 9999)(rng)]);
    ranked.emplace_back(all.begin(), all.begin() + 10);
    truth.push_back(pick(rng));
  }
  const double p = 10.0 / 10000.0;
  const double sigma = std::sqrt(p * (1 - p) / 1000.0);
  const double r = recall_at(ranked, truth, 10);
  CHECK(std::abs(r - p) <= 3 * sigma);
  // Monotone in N.
  CHECK(recall_at(ranked, truth, 1) <= recall_at(ranked, truth, 5));
  CHECK(recall_at(ranked, truth, 5) <= r);
}

TEST_CASE("config: defaults, grid identity, strict keys") {
  BenchmarkConfig c;
  CHECK_NOTHROW(c.validate());
  c.grid[16] = {3, 16};
  CHECK_THROWS_AS(c.validate(), ContractError);

  const BenchmarkConfig parsed = parse_benchmark_config(R"({"bits": [32], "grid": {"32": [4, 256]}, "seed": 9,
      "training": {"epochs": 2, "lambda_quant": 0.5}, "split": {"train": 10, "query": 5, "database": 20}})");
  CHECK(parsed.bits == std::vector<int>{32});
  CHECK(parsed.grid.at(32) == std::pair{4, 256});
  CHECK(parsed.seed == 9);
  CHECK(parsed.training.epochs == 2);
  CHECK(parsed.training.weights.quant == 0.5);
  CHECK(parsed.split.database == 20);
  CHECK_THROWS(parse_benchmark_config(R"({"bitz": [16]})"));
  CHECK_THROWS(parse_benchmark_config(R"({"training": {"epoch": 3}})"));
  CHECK_THROWS(parse_benchmark_config(R"({"methods": ["sh"]})"));

  const BenchmarkConfig again = parse_benchmark_config(benchmark_config_json(parsed));
  CHECK(benchmark_config_json(again) == benchmark_config_json(parsed));
}

TEST_CASE("benchmark: one method and one budget give three CSV rows") {
  const BenchmarkConfig c = small_config();
  const BenchmarkData data = prepare_benchmark_data(c);
  CHECK(data.split.train.count() == 300);
  CHECK(data.ground_truth.size() == 20);
  const RecallReport report = run_benchmark(c, data);
  REQUIRE(report.cells.size() == 1);
  std::ostringstream csv;
  write_bench_csv(csv, report);
  CHECK(count_lines(csv.str()) == 1 + 3);
  CHECK(csv.str().rfind(bench_csv_header(), 0) == 0);
  const RecallCell& cell = report.cells[0];
  double prev = 0;
  for (auto [n, r] : cell.recall) {
    CHECK(r >= prev);
    CHECK(r <= 1.0);
    prev = r;
  }
}

TEST_CASE("benchmark: reruns are identical and cells are independent") {
  BenchmarkConfig c = small_config();
  c.methods = {"proposed", "lsh", "itq", "pq"};
  c.grid[16] = {4, 16};
  c.pq_centroids = 16;
  const BenchmarkData data = prepare_benchmark_data(c);
  const RecallReport a = run_benchmark(c, data);
  const RecallReport b = run_benchmark(c, data);
  std::ostringstream ca, cb;
  write_bench_csv(ca, a);
  write_bench_csv(cb, b);
  CHECK(ca.str() == cb.str());
  CHECK(report_json(a) == report_json(b));
  for (const auto& cell : a.cells) CHECK(!cell.error.has_value());

  BenchmarkConfig only_pq = c;
  only_pq.methods = {"pq"};
  const RecallReport p = run_benchmark(only_pq, data);
  CHECK(p.cells[0].recall == a.find("pq", 16)->recall);

  BenchmarkConfig parallel = c;
  parallel.parallel = true;
  std::ostringstream cp;
  write_bench_csv(cp, run_benchmark(parallel, data));
  CHECK(cp.str() == ca.str());
}

TEST_CASE("benchmark: a failing cell is recorded and the rest still run") {
  BenchmarkConfig c = small_config();
  c.methods = {"pq", "lsh"};
  c.pq_centroids = 1000;  // more centroids than training points
  const RecallReport r = run_benchmark(c, prepare_benchmark_data(c));
  REQUIRE(r.cells.size() == 2);
  CHECK(r.find("pq", 16)->error.has_value());
  CHECK(!r.find("lsh", 16)->error.has_value());
  std::ostringstream csv;
  write_bench_csv(csv, r);
  CHECK(count_lines(csv.str()) == 1 + 3);
  CHECK(report_json(r).find("error") != std::string::npos);
}

TEST_CASE("weight projections: clamp, bounds, axes") {
  CatalyserConfig net;
  net.input_dim = 6;
  net.hidden_width = 8;
  net.blocks = 3;
  net.block_size = 4;
  const ModelParams m = init_model(net, 1);
  std::mt19937_64 rng(2);
  const Matrix y = embed(m, testing::random_matrix(700, 6, rng));
  const auto p = export_weight_projections(m, &y, 500, 3);
  REQUIRE(p.size() == 3);
  for (const auto& b : p) {
    CHECK(b.rows.size() == 4);
    CHECK(b.embeddings.size() == 500);
    CHECK(b.axis_i != b.axis_j);
    CHECK(b.axis_i >= 0);
    CHECK(b.axis_j < 4);
    for (auto [x, v] : b.rows) {
      CHECK(std::abs(x) <= 1.0);
      CHECK(std::abs(v) <= 1.0);
    }
    for (auto [x, v] : b.embeddings) CHECK(x * x + v * v <= 1.0 + 1e-12);
  }
  std::ostringstream w;
  write_weight_projections_csv(w, p);
  CHECK(w.str().rfind("block,axis_i,axis_j,w_x,w_y\n", 0) == 0);
  CHECK(count_lines(w.str()) == 1 + 12);
  CHECK(export_weight_projections(m, nullptr, 2, 3)[0].rows.size() == 2);
}

TEST_CASE("weight projections: rows trained without the pull term are angularly uniform") {
  // K = 2 blocks are full 2-D rows; one row per block gives independent angles.
  TrainingConfig c;
  c.network.input_dim = 16;
  c.network.hidden_width = 32;
  c.network.blocks = 128;
  c.network.block_size = 2;
  c.weights.quant = 0.0;
  c.epochs = 2;
  c.batch_size = 64;
  c.seed = 3;
  MixtureConfig mix;
  mix.dim = 16;
  mix.count = 1000;
  mix.clusters = 4;
  mix.intrinsic_dim = 3;
  const TrainingResult r = train(c, generate_mixture(mix, 5));
  const auto p = export_weight_projections(r.model, nullptr, 500, 6);
  std::vector<double> counts(16, 0.0);
  for (const auto& b : p) {
    REQUIRE(b.rows.size() == 2);
    auto [x, v] = b.rows[0];
    if (b.axis_i == 1) std::swap(x, v);
    const double angle = std::atan2(v, x) + std::numbers::pi;
    counts[std::min<std::size_t>(15, static_cast<std::size_t>(angle / (2 * std::numbers::pi) * 16))] += 1;
  }
  const double expected = 128.0 / 16.0;
  double chi2 = 0;
  for (double o : counts) chi2 += (o - expected) * (o - expected) / expected;
  const boost::math::chi_squared dist(15);
  CHECK(boost::math::quantile(dist, 0.99) == Catch::Approx(30.578).margin(1e-3));
  CHECK(boost::math::cdf(complement(dist, chi2)) > 0.01);
}
