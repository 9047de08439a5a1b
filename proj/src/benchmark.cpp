#include "sphash/benchmark.hpp"

#include "sphash/baselines.hpp"
#include "sphash/codec.hpp"
#include "sphash/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace sphash {
namespace {

using json = nlohmann::json;

// Reads only the listed keys and rejects anything else, so a typo fails loudly.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ContractError(where_ + ": expected an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ContractError(where_ + ": unknown key '" + key + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& target) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      target = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ContractError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_training(const json& j, TrainingConfig& t) {
  Section s(j, "training");
  s.get("hidden_width", t.network.hidden_width);
  s.get("hidden_layers", t.network.hidden_layers);
  s.get("batch_size", t.batch_size);
  s.get("epochs", t.epochs);
  s.get("validation_fraction", t.validation_fraction);
  s.get("neighbours", t.neighbours);
  s.get("steps_per_epoch", t.steps_per_epoch);
  std::string mining = to_string(t.mining);
  s.get("mining", mining);
  t.mining = parse_negative_mining(mining);
  s.get("learning_rate", t.adam.learning_rate);
  s.get("lambda_tri_y", t.weights.tri_y);
  s.get("lambda_koleo_y", t.weights.koleo_y);
  s.get("lambda_koleo_w", t.weights.koleo_w);
  s.get("lambda_quant", t.weights.quant);
  s.get("margin_z", t.weights.margin_z);
  s.get("margin_y", t.weights.margin_y);
}

void read_synthetic(const json& j, MixtureConfig& m) {
  Section s(j, "synthetic");
  s.get("dim", m.dim);
  s.get("clusters", m.clusters);
  s.get("intrinsic_dim", m.intrinsic_dim);
  s.get("centre_spread", m.centre_spread);
  s.get("cluster_spread", m.cluster_spread);
  s.get("noise", m.noise);
}

std::string fmt(const char* spec, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

std::vector<std::vector<std::uint32_t>> ids_of(const std::vector<std::vector<SearchHit>>& hits) {
  std::vector<std::vector<std::uint32_t>> out;
  out.reserve(hits.size());
  for (const auto& row : hits) {
    std::vector<std::uint32_t> ids;
    ids.reserve(row.size());
    for (const SearchHit& h : row) ids.push_back(h.index);
    out.push_back(std::move(ids));
  }
  return out;
}

bool is_proposed(const std::string& method) { return method == "proposed" || method == "proposed-noquant"; }

}  // namespace

void BenchmarkConfig::validate() const {
  require(train_source == "base" || train_source == "learn", "config: train_source must be 'base' or 'learn'");
  require(train_source == "base" || !learn_path.empty(), "config: train_source 'learn' needs learn_path");
  require(!methods.empty(), "config: empty method list");
  for (const auto& m : methods) {
    require(std::find(kKnownMethods.begin(), kKnownMethods.end(), m) != kKnownMethods.end(),
            "config: unknown method '" + m + "'");
  }
  require(!bits.empty(), "config: empty bit-budget list");
  require(!recall_ns.empty(), "config: empty recall list");
  for (std::size_t n : recall_ns) require(n >= 1, "config: recall N must be positive");
  for (int b : bits) {
    require(b >= 1, "config: bit budgets must be positive");
    for (const auto& m : methods) {
      if (!is_proposed(m)) continue;
      auto it = grid.find(b);
      require(it != grid.end(), "config: no (M, K) grid entry for " + std::to_string(b) + " bits");
    }
  }
  for (const auto& [b, mk] : grid) {
    require(mk.first >= 1 && mk.second >= 2, "config: grid entry for " + std::to_string(b) + " bits needs M >= 1, K >= 2");
    require(mk.first * bits_per_index(mk.second) == b,
            "config: grid entry (" + std::to_string(mk.first) + ", " + std::to_string(mk.second) + ") uses " +
                std::to_string(mk.first * bits_per_index(mk.second)) + " bits, not " + std::to_string(b));
  }
  require(split.train >= 2 && split.query >= 1 && split.database >= 1, "config: split sizes too small");
  require(itq_iterations >= 0 && kmeans_iterations >= 0, "config: iteration counts must be non-negative");
  require(pq_centroids >= 2, "config: pq_centroids must be at least 2");
  synthetic.validate();
  training.weights.validate();
}

BenchmarkConfig parse_benchmark_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ContractError(std::string("config: ") + e.what());
  }
  BenchmarkConfig c;
  {
    Section s(j, "config");
    std::string base, learn, out;
    s.get("base_path", base);
    s.get("learn_path", learn);
    s.get("output_dir", out);
    if (!base.empty()) c.base_path = base;
    if (!learn.empty()) c.learn_path = learn;
    if (!out.empty()) c.output_dir = out;
    s.get("train_source", c.train_source);
    if (const json* syn = s.child("synthetic")) read_synthetic(*syn, c.synthetic);
    if (const json* sp = s.child("split")) {
      Section ss(*sp, "split");
      ss.get("train", c.split.train);
      ss.get("query", c.split.query);
      ss.get("database", c.split.database);
    }
    s.get("methods", c.methods);
    s.get("bits", c.bits);
    if (const json* g = s.child("grid")) {
      if (!g->is_object()) throw ContractError("config.grid: expected an object of \"bits\": [M, K]");
      c.grid.clear();
      for (const auto& [key, value] : g->items()) {
        std::size_t used = 0;
        int b = 0;
        try {
          b = std::stoi(key, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != key.size()) throw ContractError("config.grid: key '" + key + "' is not a bit count");
        if (!value.is_array() || value.size() != 2) throw ContractError("config.grid." + key + ": expected [M, K]");
        c.grid[b] = {value[0].get<int>(), value[1].get<int>()};
      }
    }
    s.get("recall_ns", c.recall_ns);
    if (const json* t = s.child("training")) read_training(*t, c.training);
    s.get("itq_iterations", c.itq_iterations);
    s.get("kmeans_iterations", c.kmeans_iterations);
    s.get("pq_centroids", c.pq_centroids);
    s.get("seed", c.seed);
    s.get("timing", c.timing);
    s.get("parallel", c.parallel);
    s.get("save_models", c.save_models);
  }
  c.validate();
  return c;
}

BenchmarkConfig load_benchmark_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_benchmark_config(ss.str());
}

std::string benchmark_config_json(const BenchmarkConfig& c) {
  json grid = json::object();
  for (const auto& [b, mk] : c.grid) grid[std::to_string(b)] = {mk.first, mk.second};
  const TrainingConfig& t = c.training;
  json j = {
      {"base_path", c.base_path.string()},
      {"learn_path", c.learn_path.string()},
      {"train_source", c.train_source},
      {"synthetic",
       {{"dim", c.synthetic.dim},
        {"clusters", c.synthetic.clusters},
        {"intrinsic_dim", c.synthetic.intrinsic_dim},
        {"centre_spread", c.synthetic.centre_spread},
        {"cluster_spread", c.synthetic.cluster_spread},
        {"noise", c.synthetic.noise}}},
      {"split", {{"train", c.split.train}, {"query", c.split.query}, {"database", c.split.database}}},
      {"methods", c.methods},
      {"bits", c.bits},
      {"grid", grid},
      {"recall_ns", c.recall_ns},
      {"training",
       {{"hidden_width", t.network.hidden_width},
        {"hidden_layers", t.network.hidden_layers},
        {"batch_size", t.batch_size},
        {"epochs", t.epochs},
        {"validation_fraction", t.validation_fraction},
        {"neighbours", t.neighbours},
        {"steps_per_epoch", t.steps_per_epoch},
        {"mining", to_string(t.mining)},
        {"learning_rate", t.adam.learning_rate},
        {"lambda_tri_y", t.weights.tri_y},
        {"lambda_koleo_y", t.weights.koleo_y},
        {"lambda_koleo_w", t.weights.koleo_w},
        {"lambda_quant", t.weights.quant},
        {"margin_z", t.weights.margin_z},
        {"margin_y", t.weights.margin_y}}},
      {"itq_iterations", c.itq_iterations},
      {"kmeans_iterations", c.kmeans_iterations},
      {"pq_centroids", c.pq_centroids},
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"timing", c.timing},
      {"parallel", c.parallel},
      {"save_models", c.save_models},
  };
  return j.dump(2);
}

BenchmarkData prepare_benchmark_data(const BenchmarkConfig& config, std::size_t ground_truth_k) {
  config.validate();
  BenchmarkData d;
  const std::uint64_t split_seed = config.seed;
  if (config.base_path.empty()) {
    MixtureConfig m = config.synthetic;
    m.count = config.split.train + config.split.query + config.split.database;
    d.split = split_dataset(generate_mixture(m, config.seed), config.split, split_seed);
  } else if (config.train_source == "learn") {
    const VectorSet base = read_vectors(config.base_path);
    const VectorSet learn = read_vectors(config.learn_path);
    require(base.dim == learn.dim, "prepare: learn and base files have different dimensions");
    DatasetSplit qd = split_dataset(base, {0, config.split.query, config.split.database}, split_seed);
    DatasetSplit tr = split_dataset(learn, {config.split.train, 0, 0}, split_seed + 1);
    d.split.train = std::move(tr.train);
    d.split.train_rows = std::move(tr.train_rows);
    d.split.query = std::move(qd.query);
    d.split.query_rows = std::move(qd.query_rows);
    d.split.database = std::move(qd.database);
    d.split.database_rows = std::move(qd.database_rows);
  } else {
    d.split = split_dataset(read_vectors(config.base_path), config.split, split_seed);
  }
  const std::size_t k = std::min<std::size_t>(ground_truth_k, static_cast<std::size_t>(d.split.database.count()));
  d.ground_truth = brute_force_neighbours(d.split.query, d.split.database, k);
  return d;
}

std::optional<double> RecallCell::recall_at_n(std::size_t n) const {
  for (const auto& [k, r] : recall) {
    if (k == n) return r;
  }
  return std::nullopt;
}

const RecallCell* RecallReport::find(const std::string& method, int bits) const {
  for (const RecallCell& c : cells) {
    if (c.method == method && c.bits == bits) return &c;
  }
  return nullptr;
}

std::uint64_t cell_seed(std::uint64_t seed, const std::string& method, int bits) {
  // FNV-1a over the cell name, mixed with the master seed through seed_seq.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : method) h = (h ^ ch) * 1099511628211ULL;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32), static_cast<std::uint32_t>(bits)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

RecallCell run_cell(const BenchmarkConfig& config, const BenchmarkData& data, const std::string& method, int bits,
                    std::ostream* progress) {
  RecallCell cell;
  cell.method = method;
  cell.bits = bits;
  const std::uint64_t seed = cell_seed(config.seed, method, bits);
  const Matrix train_x = data.split.train.data.cast<double>();
  const Matrix db = data.split.database.data.cast<double>();
  const Matrix queries = data.split.query.data.cast<double>();
  const std::size_t max_n = std::min<std::size_t>(*std::max_element(config.recall_ns.begin(), config.recall_ns.end()),
                                                  static_cast<std::size_t>(db.rows()));
  std::vector<std::int32_t> truth;
  for (const auto& row : data.ground_truth.rows) {
    require(!row.empty(), "benchmark: empty ground-truth row");
    truth.push_back(row.front());
  }

  std::vector<std::vector<SearchHit>> hits(static_cast<std::size_t>(queries.rows()));
  double encode_ms = 0.0;
  double scan_ms = 0.0;
  try {
    if (is_proposed(method)) {
      const auto [M, K] = config.grid.at(bits);
      cell.M = M;
      cell.K = K;
      TrainingConfig tc = config.training;
      tc.network.input_dim = train_x.cols();
      tc.network.blocks = M;
      tc.network.block_size = K;
      tc.seed = seed;
      if (method == "proposed-noquant") tc.weights.quant = 0.0;
      TrainingResult trained = train(tc, data.split.train);
      if (config.save_models) {
        std::filesystem::create_directories(config.output_dir / "models");
        save_checkpoint(config.output_dir / "models" / (method + "_" + std::to_string(bits) + ".sphc"), trained.model);
      }
      auto t0 = std::chrono::steady_clock::now();
      const CodeMatrix codes = encode(trained.model, db);
      encode_ms = elapsed_ms(t0);
      cell.code_entropy = code_histogram_entropies(codes, K);
      t0 = std::chrono::steady_clock::now();
      const Matrix yq = embed(trained.model, queries);
      for (Eigen::Index q = 0; q < yq.rows(); ++q) {
        hits[static_cast<std::size_t>(q)] = reconstruction_search(trained.model, yq.row(q).transpose(), codes, max_n);
      }
      scan_ms = elapsed_ms(t0);
    } else if (method == "lsh" || method == "itq") {
      cell.M = bits;
      cell.K = 2;
      CodeMatrix codes;
      CodeMatrix qcodes;
      auto t0 = std::chrono::steady_clock::now();
      if (method == "lsh") {
        const LshModel model = lsh_train(train_x, bits, seed);
        t0 = std::chrono::steady_clock::now();
        codes = lsh_encode(model, db);
        encode_ms = elapsed_ms(t0);
        qcodes = lsh_encode(model, queries);
      } else {
        const ItqModel model = itq_train(train_x, bits, config.itq_iterations, seed);
        cell.M = model.bits();
        t0 = std::chrono::steady_clock::now();
        codes = itq_encode(model, db);
        encode_ms = elapsed_ms(t0);
        qcodes = itq_encode(model, queries);
      }
      t0 = std::chrono::steady_clock::now();
      for (Eigen::Index q = 0; q < qcodes.rows(); ++q) {
        hits[static_cast<std::size_t>(q)] =
            search(QueryRepr{Code(qcodes.row(q).transpose())}, codes, cell.M, 2, max_n, DistanceMode::symmetric);
      }
      scan_ms = elapsed_ms(t0);
    } else if (method == "pq") {
      const int per = bits_per_index(config.pq_centroids);
      require(bits % per == 0, "pq: " + std::to_string(bits) + " bits is not a multiple of " + std::to_string(per));
      cell.M = bits / per;
      cell.K = config.pq_centroids;
      const PqModel model = pq_train(train_x, cell.M, cell.K, config.kmeans_iterations, seed);
      auto t0 = std::chrono::steady_clock::now();
      const CodeMatrix codes = pq_encode(model, db);
      encode_ms = elapsed_ms(t0);
      t0 = std::chrono::steady_clock::now();
      for (Eigen::Index q = 0; q < queries.rows(); ++q) {
        hits[static_cast<std::size_t>(q)] = pq_search(model, queries.row(q).transpose(), codes, max_n);
      }
      scan_ms = elapsed_ms(t0);
    } else {
      throw ContractError("unknown method '" + method + "'");
    }
    const auto ranked = ids_of(hits);
    for (std::size_t n : config.recall_ns) {
      cell.recall.emplace_back(n, recall_at(ranked, truth, std::min(n, max_n)));
    }
    if (config.timing) {
      cell.encode_time_ms = encode_ms;
      cell.scan_time_ms = scan_ms;
    }
  } catch (const std::exception& e) {
    cell.error = e.what();
    cell.recall.clear();
  }
  if (progress != nullptr) {
    *progress << method << " @ " << bits << " bits: ";
    if (cell.error) {
      *progress << "error: " << *cell.error << '\n';
    } else {
      for (const auto& [n, r] : cell.recall) *progress << "R@" << n << "=" << fmt("%.4f", r) << ' ';
      *progress << '\n';
    }
  }
  return cell;
}

RecallReport run_benchmark(const BenchmarkConfig& config, const BenchmarkData& data, std::ostream* progress) {
  config.validate();
  std::vector<std::pair<std::string, int>> jobs;
  for (const auto& m : config.methods) {
    for (int b : config.bits) jobs.emplace_back(m, b);
  }
  RecallReport report;
  report.cells.resize(jobs.size());
  if (config.parallel) {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      pool.emplace_back([&, i] { report.cells[i] = run_cell(config, data, jobs[i].first, jobs[i].second); });
    }
  } else {
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      report.cells[i] = run_cell(config, data, jobs[i].first, jobs[i].second, progress);
    }
  }
  return report;
}

std::string bench_csv_header() { return "method,bits,M,K,N,recall,encode_time_ms,scan_time_ms"; }

void write_bench_csv(std::ostream& out, const RecallReport& report) {
  out << bench_csv_header() << '\n';
  for (const RecallCell& c : report.cells) {
    for (const auto& [n, r] : c.recall) {
      out << c.method << ',' << c.bits << ',' << c.M << ',' << c.K << ',' << n << ',' << fmt("%.6f", r) << ','
          << fmt("%.3f", c.encode_time_ms) << ',' << fmt("%.3f", c.scan_time_ms) << '\n';
    }
  }
}

std::string report_json(const RecallReport& report) {
  json cells = json::array();
  for (const RecallCell& c : report.cells) {
    json recall = json::object();
    for (const auto& [n, r] : c.recall) recall[std::to_string(n)] = r;
    json cell = {{"method", c.method},
                 {"bits", c.bits},
                 {"M", c.M},
                 {"K", c.K},
                 {"recall", recall},
                 {"encode_time_ms", c.encode_time_ms},
                 {"scan_time_ms", c.scan_time_ms}};
    if (!c.code_entropy.empty()) cell["code_entropy"] = c.code_entropy;
    cell["error"] = c.error ? json(*c.error) : json(nullptr);
    cells.push_back(std::move(cell));
  }
  return json{{"cells", cells}}.dump(2);
}

void write_benchmark_artifacts(const BenchmarkConfig& config, const RecallReport& report) {
  std::filesystem::create_directories(config.output_dir);
  std::ofstream csv(config.output_dir / "bench.csv", std::ios::binary);
  write_bench_csv(csv, report);
  std::ofstream js(config.output_dir / "bench.json", std::ios::binary);
  js << report_json(report) << '\n';
  if (!csv || !js) throw Error("failed writing benchmark artifacts to " + config.output_dir.string());
}

std::vector<BlockProjection> export_weight_projections(const ModelParams& model, const Matrix* y, std::size_t per_block,
                                                       std::uint64_t seed) {
  const int K = model.config.block_size;
  require(K >= 2, "export_weight_projections: need K >= 2");
  if (y != nullptr) require(y->cols() == model.config.code_dim(), "export_weight_projections: y has the wrong width");
  std::mt19937_64 rng(seed);
  std::vector<BlockProjection> out;
  for (int m = 0; m < model.config.blocks; ++m) {
    BlockProjection p;
    p.block = m;
    std::vector<int> axes(static_cast<std::size_t>(K));
    std::iota(axes.begin(), axes.end(), 0);
    std::shuffle(axes.begin(), axes.end(), rng);
    p.axis_i = axes[0];
    p.axis_j = axes[1];

    auto pick = [&](Eigen::Index available) {
      std::vector<Eigen::Index> rows(static_cast<std::size_t>(available));
      std::iota(rows.begin(), rows.end(), Eigen::Index{0});
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(std::min<std::size_t>(per_block, rows.size()));
      std::sort(rows.begin(), rows.end());
      return rows;
    };
    const Matrix& w = model.quantiser[static_cast<std::size_t>(m)];
    for (Eigen::Index r : pick(w.rows())) p.rows.emplace_back(w(r, p.axis_i), w(r, p.axis_j));
    if (y != nullptr) {
      const Eigen::Index off = static_cast<Eigen::Index>(m) * K;
      for (Eigen::Index r : pick(y->rows())) p.embeddings.emplace_back((*y)(r, off + p.axis_i), (*y)(r, off + p.axis_j));
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_weight_projections_csv(std::ostream& out, const std::vector<BlockProjection>& projections) {
  out << "block,axis_i,axis_j,w_x,w_y\n";
  for (const auto& p : projections) {
    for (const auto& [x, yv] : p.rows) {
      out << p.block << ',' << p.axis_i << ',' << p.axis_j << ',' << fmt("%.10g", x) << ',' << fmt("%.10g", yv) << '\n';
    }
  }
}

void write_embedding_projections_csv(std::ostream& out, const std::vector<BlockProjection>& projections) {
  out << "block,axis_i,axis_j,y_x,y_y\n";
  for (const auto& p : projections) {
    for (const auto& [x, yv] : p.embeddings) {
      out << p.block << ',' << p.axis_i << ',' << p.axis_j << ',' << fmt("%.10g", x) << ',' << fmt("%.10g", yv) << '\n';
    }
  }
}

}  // namespace sphash
