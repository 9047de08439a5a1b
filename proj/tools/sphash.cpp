// sphash command-line tool: data preparation, training, encoding, search, benchmarks
// and geometry sampling.

#include "sphash/baselines.hpp"
#include "sphash/benchmark.hpp"
#include "sphash/codec.hpp"
#include "sphash/data_io.hpp"
#include "sphash/geometry.hpp"
#include "sphash/network.hpp"
#include "sphash/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace sphash;

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config_path;

  BenchmarkConfig config() const {
    BenchmarkConfig c = config_path.empty() ? BenchmarkConfig{} : load_benchmark_config(config_path);
    if (seed_given) c.seed = seed;
    return c;
  }
};

void cmd_prepare(const Globals& g, const std::string& base, const std::string& learn, const std::string& source,
                 const std::string& out_dir, std::size_t gt_k) {
  BenchmarkConfig c = g.config();
  if (!base.empty()) c.base_path = base;
  if (!learn.empty()) c.learn_path = learn;
  if (!source.empty()) c.train_source = source;
  const BenchmarkData d = prepare_benchmark_data(c, gt_k);
  const fs::path dir = out_dir;
  fs::create_directories(dir);
  write_fvecs(dir / "train.fvecs", d.split.train);
  write_fvecs(dir / "query.fvecs", d.split.query);
  write_fvecs(dir / "database.fvecs", d.split.database);
  write_ivecs(dir / "groundtruth.ivecs", d.ground_truth);
  auto rows = open_out(dir / "split_rows.csv");
  rows << "part,row\n";
  for (std::size_t r : d.split.train_rows) rows << "train," << r << '\n';
  for (std::size_t r : d.split.query_rows) rows << "query," << r << '\n';
  for (std::size_t r : d.split.database_rows) rows << "database," << r << '\n';
  std::cout << "wrote " << d.split.train.count() << " train, " << d.split.query.count() << " query, "
            << d.split.database.count() << " database vectors and " << d.ground_truth.k() << "-NN ground truth to "
            << dir << '\n';
}

void cmd_train(const Globals& g, const std::string& data_path, const std::string& out, const std::string& log_path,
               int M, int K, int epochs, double lambda_quant) {
  const BenchmarkConfig c = g.config();
  TrainingConfig tc = c.training;
  const VectorSet data = read_vectors(data_path);
  tc.network.input_dim = data.dim;
  tc.network.blocks = M;
  tc.network.block_size = K;
  tc.seed = c.seed;
  if (epochs >= 0) tc.epochs = epochs;
  if (lambda_quant >= 0) tc.weights.quant = lambda_quant;
  std::ofstream log;
  if (!log_path.empty()) log = open_out(log_path);
  TrainingResult r = train(tc, data, log_path.empty() ? nullptr : &log);
  save_checkpoint(out, r.model, &r.optimizers.catalyser, &r.optimizers.quantiser);
  std::cout << "trained " << r.steps.size() << " steps; best epoch " << r.best_epoch << " (validation recall@10 "
            << num(r.best_validation_recall) << "); saved " << out << '\n';
}

void cmd_encode(const std::string& model_path, const std::string& data_path, const std::string& out) {
  const Checkpoint ck = load_checkpoint(model_path);
  const VectorSet data = read_vectors(data_path);
  const CodeMatrix codes = encode(ck.model, data.data.cast<double>());
  const CodeDatabase db = CodeDatabase::from_codes(codes, ck.model.config.blocks, ck.model.config.block_size);
  write_code_database(out, db);
  std::cout << "encoded " << db.count << " vectors, " << db.code_bytes() << " bytes each, into " << out << '\n';
}

void cmd_search(const std::string& model_path, const std::string& codes_path, const std::string& query_path,
                const std::string& out, std::size_t n, const std::string& mode) {
  const Checkpoint ck = load_checkpoint(model_path);
  const CodeDatabase db = read_code_database(codes_path);
  require(db.M == ck.model.config.blocks && db.K == ck.model.config.block_size,
          "search: code database (M, K) does not match the model");
  const VectorSet queries = read_vectors(query_path);
  const Matrix x = queries.data.cast<double>();
  const std::size_t top = std::min<std::size_t>(n, db.count);
  NeighbourTable result;
  if (mode == "reconstruction") {
    const Matrix y = embed(ck.model, x);
    const CodeMatrix codes = db.unpack_all();
    for (Eigen::Index q = 0; q < y.rows(); ++q) {
      std::vector<std::int32_t> ids;
      for (const SearchHit& h : reconstruction_search(ck.model, y.row(q).transpose(), codes, top)) {
        ids.push_back(static_cast<std::int32_t>(h.index));
      }
      result.rows.push_back(std::move(ids));
    }
  } else if (mode == "adc") {
    const Matrix y = embed(ck.model, x);
    for (Eigen::Index q = 0; q < y.rows(); ++q) {
      std::vector<std::int32_t> ids;
      for (const SearchHit& h : search(QueryRepr{Vector(y.row(q).transpose())}, db, top, DistanceMode::adc)) {
        ids.push_back(static_cast<std::int32_t>(h.index));
      }
      result.rows.push_back(std::move(ids));
    }
  } else if (mode == "symmetric") {
    const CodeMatrix qc = encode(ck.model, x);
    for (Eigen::Index q = 0; q < qc.rows(); ++q) {
      std::vector<std::int32_t> ids;
      for (const SearchHit& h : search(QueryRepr{Code(qc.row(q).transpose())}, db, top, DistanceMode::symmetric)) {
        ids.push_back(static_cast<std::int32_t>(h.index));
      }
      result.rows.push_back(std::move(ids));
    }
  } else {
    throw ContractError("search: mode must be reconstruction, adc or symmetric");
  }
  write_ivecs(out, result);
  std::cout << "wrote top-" << top << " results for " << result.size() << " queries to " << out << '\n';
}

void cmd_bench(const Globals& g, const std::string& out_dir) {
  BenchmarkConfig c = g.config();
  if (!out_dir.empty()) c.output_dir = out_dir;
  const BenchmarkData d = prepare_benchmark_data(c);
  const RecallReport report = run_benchmark(c, d, &std::cerr);
  write_benchmark_artifacts(c, report);
  std::cout << "wrote " << (c.output_dir / "bench.csv") << " and " << (c.output_dir / "bench.json") << '\n';
}

void cmd_geolab(const Globals& g, const std::string& shape_name, const std::vector<int>& dims, std::size_t samples,
                std::size_t bins, const std::string& out) {
  const auto shape = geometry::parse_shape(shape_name);
  auto csv = open_out(out);
  csv << "shape,n,bin,lower,upper,mass,mean,variance\n";
  for (int n : dims) {
    const auto d = geometry::sample_pair_distances(shape, n, samples, g.seed + static_cast<std::uint64_t>(n));
    const auto h = geometry::distance_histogram(d, n, bins, geometry::max_distance(shape, n));
    for (std::size_t b = 0; b < bins; ++b) {
      csv << shape_name << ',' << n << ',' << b << ',' << num(h.edges[b]) << ',' << num(h.edges[b + 1]) << ','
          << num(h.masses[b]) << ',' << num(h.mean) << ',' << num(h.variance) << '\n';
    }
    std::cout << shape_name << " n=" << n << ": mean " << num(h.mean) << ", variance " << num(h.variance) << '\n';
  }
}

void cmd_export(const Globals& g, const std::string& model_path, const std::string& out, const std::string& y_data,
                const std::string& y_out, std::size_t per_block) {
  const Checkpoint ck = load_checkpoint(model_path);
  Matrix y;
  if (!y_data.empty()) y = embed(ck.model, read_vectors(y_data).data.cast<double>());
  const auto p = export_weight_projections(ck.model, y_data.empty() ? nullptr : &y, per_block, g.seed);
  auto w = open_out(out);
  write_weight_projections_csv(w, p);
  if (!y_data.empty()) {
    const fs::path target = y_out.empty() ? fs::path(fs::path(out).replace_extension().string() + "_y.csv") : fs::path(y_out);
    auto yo = open_out(target);
    write_embedding_projections_csv(yo, p);
  }
  std::cout << "wrote " << out << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured binary codes on a product of spheres: train, encode, search, benchmark"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Master random seed")->each([&](const std::string&) { g.seed_given = true; });
  app.add_option("--config", g.config_path, "JSON configuration file")->check(CLI::ExistingFile);

  auto* prepare = app.add_subcommand("prepare", "Split a dataset and compute exact ground truth");
  std::string base, learn, source, prep_out = "data";
  std::size_t gt_k = 100;
  prepare->add_option("--base", base, "Base vectors (.fvecs/.bvecs); omit for synthetic data");
  prepare->add_option("--learn", learn, "Separate training vectors");
  prepare->add_option("--train-source", source, "Where training points come from")->check(CLI::IsMember({"base", "learn"}));
  prepare->add_option("--out", prep_out, "Output directory");
  prepare->add_option("--gt-k", gt_k, "Neighbours per query in the ground truth");

  auto* train_cmd = app.add_subcommand("train", "Train the catalyser and quantiser");
  std::string train_data, model_out = "model.sphc", log_path;
  int M = 4, K = 16, epochs = -1;
  double lambda_quant = -1;
  train_cmd->add_option("--data", train_data, "Training vectors")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", model_out, "Checkpoint path");
  train_cmd->add_option("--log", log_path, "Training log CSV");
  train_cmd->add_option("-M,--blocks", M, "Number of blocks");
  train_cmd->add_option("-K,--block-size", K, "Entries per block");
  train_cmd->add_option("--epochs", epochs, "Override the configured epoch count");
  train_cmd->add_option("--lambda-quant", lambda_quant, "Override the quantisation-pull weight");

  auto* encode_cmd = app.add_subcommand("encode", "Encode vectors into a packed code database");
  std::string model_path, enc_data, codes_out = "codes.sph";
  encode_cmd->add_option("--model", model_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  encode_cmd->add_option("--data", enc_data, "Vectors to encode")->required()->check(CLI::ExistingFile);
  encode_cmd->add_option("--out", codes_out, "Code database path");

  auto* search_cmd = app.add_subcommand("search", "Exhaustive search of a code database");
  std::string s_model, s_codes, s_queries, s_out = "results.ivecs", mode = "reconstruction";
  std::size_t top_n = 100;
  search_cmd->add_option("--model", s_model, "Checkpoint")->required()->check(CLI::ExistingFile);
  search_cmd->add_option("--codes", s_codes, "Code database")->required()->check(CLI::ExistingFile);
  search_cmd->add_option("--queries", s_queries, "Query vectors")->required()->check(CLI::ExistingFile);
  search_cmd->add_option("--out", s_out, "Result ivecs");
  search_cmd->add_option("-n", top_n, "Results per query");
  search_cmd->add_option("--mode", mode, "reconstruction (query embedding vs decoded code), adc (one-hot) or symmetric")
      ->check(CLI::IsMember({"reconstruction", "adc", "symmetric"}));

  auto* bench = app.add_subcommand("bench", "Recall sweep over methods and bit budgets");
  std::string bench_out;
  bench->add_option("--out", bench_out, "Output directory (overrides the config)");

  auto* geolab = app.add_subcommand("geolab", "Pairwise-distance histograms on the simplex, sphere or cube");
  std::string shape = "sphere", geo_out = "geolab.csv";
  std::vector<int> dims = {2, 4, 16, 64, 256};
  std::size_t samples = 100000, bins = 50;
  geolab->add_option("--shape", shape, "simplex, sphere or cube")->check(CLI::IsMember({"simplex", "sphere", "cube"}));
  geolab->add_option("-n,--dims", dims, "Dimensions");
  geolab->add_option("--samples", samples, "Point pairs per dimension");
  geolab->add_option("--bins", bins, "Histogram bins");
  geolab->add_option("--out", geo_out, "CSV output");

  auto* exp = app.add_subcommand("export-weights", "Project quantiser rows onto random axis pairs");
  std::string e_model, e_out = "weights.csv", e_y, e_y_out;
  std::size_t per_block = 500;
  exp->add_option("--model", e_model, "Checkpoint")->required()->check(CLI::ExistingFile);
  exp->add_option("--out", e_out, "Weight projection CSV");
  exp->add_option("--y-data", e_y, "Vectors whose embeddings are projected too");
  exp->add_option("--y-out", e_y_out, "Embedding projection CSV (default: <out>_y.csv)");
  exp->add_option("--per-block", per_block, "Rows sampled per block");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prepare) cmd_prepare(g, base, learn, source, prep_out, gt_k);
    if (*train_cmd) cmd_train(g, train_data, model_out, log_path, M, K, epochs, lambda_quant);
    if (*encode_cmd) cmd_encode(model_path, enc_data, codes_out);
    if (*search_cmd) cmd_search(s_model, s_codes, s_queries, s_out, top_n, mode);
    if (*bench) cmd_bench(g, bench_out);
    if (*geolab) cmd_geolab(g, shape, dims, samples, bins, geo_out);
    if (*exp) cmd_export(g, e_model, e_out, e_y, e_y_out, per_block);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
