#include "sphash/network.hpp"

#include "sphash/data_io.hpp"
#include "sphash/serialization.hpp"

#include <cmath>
#include <random>
#include <string>
#include <utility>

namespace sphash {
namespace {

constexpr std::string_view kCheckpointMagic = "SPHC";
constexpr std::uint32_t kCheckpointVersion = 1;

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = normal(rng);
  return m;
}

void write_adam(ByteWriter& w, const AdamState& s) {
  w.f64(s.config.learning_rate);
  w.f64(s.config.beta1);
  w.f64(s.config.beta2);
  w.f64(s.config.epsilon);
  w.i64(s.step);
  w.u32(static_cast<std::uint32_t>(s.m.size()));
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    w.matrix(s.m[i]);
    w.matrix(s.v[i]);
  }
}

AdamState read_adam(ByteReader& r, std::span<const Matrix* const> params, const char* group) {
  AdamState s;
  s.config.learning_rate = r.f64();
  s.config.beta1 = r.f64();
  s.config.beta2 = r.f64();
  s.config.epsilon = r.f64();
  s.step = r.i64();
  const std::uint32_t n = r.u32();
  if (n != params.size()) {
    throw FormatError(std::string(group) + " optimizer holds " + std::to_string(n) + " slots, model has " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    s.m.push_back(r.matrix(params[i]->rows(), params[i]->cols(), std::string(group) + " optimizer m"));
    s.v.push_back(r.matrix(params[i]->rows(), params[i]->cols(), std::string(group) + " optimizer v"));
  }
  return s;
}

}  // namespace

void CatalyserConfig::validate() const {
  require(input_dim >= 1, "CatalyserConfig: input_dim must be positive");
  require(hidden_width >= 1, "CatalyserConfig: hidden_width must be positive");
  require(hidden_layers >= 0, "CatalyserConfig: hidden_layers must be non-negative");
  require(blocks >= 1, "CatalyserConfig: M must be at least 1");
  require(block_size >= 2, "CatalyserConfig: K must be at least 2");
}

std::vector<Matrix*> ModelParams::catalyser_parameters() {
  std::vector<Matrix*> out;
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    out.push_back(&hidden[l].weight);
    out.push_back(&hidden[l].bias);
    out.push_back(&norms[l].gamma);
    out.push_back(&norms[l].beta);
  }
  out.push_back(&output.weight);
  out.push_back(&output.bias);
  return out;
}

std::vector<const Matrix*> ModelParams::catalyser_parameters() const {
  auto mut = const_cast<ModelParams*>(this)->catalyser_parameters();
  return {mut.begin(), mut.end()};
}

std::vector<Matrix*> ModelParams::quantiser_parameters() {
  std::vector<Matrix*> out;
  for (auto& w : quantiser) out.push_back(&w);
  return out;
}

std::vector<const Matrix*> ModelParams::quantiser_parameters() const {
  std::vector<const Matrix*> out;
  for (const auto& w : quantiser) out.push_back(&w);
  return out;
}

ModelParams init_model(const CatalyserConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.config = config;
  Eigen::Index fan_in = config.input_dim;
  for (int l = 0; l < config.hidden_layers; ++l) {
    const Eigen::Index w = config.hidden_width;
    p.hidden.push_back({gaussian(w, fan_in, std::sqrt(2.0 / static_cast<double>(fan_in)), rng), Matrix::Zero(1, w)});
    p.norms.push_back({Matrix::Ones(1, w), Matrix::Zero(1, w), Eigen::RowVectorXd::Zero(w), Eigen::RowVectorXd::Ones(w)});
    fan_in = w;
  }
  const Eigen::Index d = config.code_dim();
  p.output = {gaussian(d, fan_in, std::sqrt(1.0 / static_cast<double>(fan_in)), rng), Matrix::Zero(1, d)};
  for (int m = 0; m < config.blocks; ++m) {
    p.quantiser.push_back(gaussian(config.block_size, config.block_size, 1.0, rng));
  }
  renormalize_quantiser_rows(p);
  return p;
}

void renormalize_quantiser_rows(ModelParams& model) {
  for (Matrix& w : model.quantiser) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      const double n = w.row(i).norm();
      if (n > 0.0) w.row(i) /= n;
    }
  }
}

void update_running_stats(ModelParams& model, std::span<const ad::BatchMoments> moments, Eigen::Index batch_size) {
  require(moments.size() == model.norms.size(), "update_running_stats: one moment pair per norm layer expected");
  const double n = static_cast<double>(batch_size);
  const double unbias = batch_size > 1 ? n / (n - 1.0) : 1.0;
  for (std::size_t l = 0; l < moments.size(); ++l) {
    NormLayer& norm = model.norms[l];
    norm.running_mean = kBatchNormMomentum * norm.running_mean + (1.0 - kBatchNormMomentum) * moments[l].mean;
    norm.running_var = kBatchNormMomentum * norm.running_var + (1.0 - kBatchNormMomentum) * unbias * moments[l].variance;
  }
}

BoundModel bind(ad::Tape& tape, const ModelParams& model, bool tracked) {
  BoundModel b;
  auto leaf = [&](const Matrix& m) { return tracked ? tape.variable(m) : tape.constant(m); };
  for (const Matrix* p : model.catalyser_parameters()) b.catalyser.push_back(leaf(*p));
  for (const Matrix* p : model.quantiser_parameters()) b.quantiser.push_back(leaf(*p));
  return b;
}

ad::Var catalyse(const ModelParams& model, const BoundModel& bound, const ad::Var& x, ad::Mode mode,
                 std::vector<ad::BatchMoments>* moments) {
  const CatalyserConfig& c = model.config;
  require(x.cols() == c.input_dim, "catalyse: input has " + std::to_string(x.cols()) + " features, expected " +
                                       std::to_string(c.input_dim));
  require(x.rows() > 0, "catalyse: empty batch");
  if (moments != nullptr) moments->clear();
  ad::Var h = x;
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    const ad::Var& w = bound.catalyser[4 * l];
    const ad::Var& bias = bound.catalyser[4 * l + 1];
    const ad::Var& gamma = bound.catalyser[4 * l + 2];
    const ad::Var& beta = bound.catalyser[4 * l + 3];
    h = ad::add_row(ad::matmul(h, ad::transpose(w)), bias);
    ad::BatchMoments bm;
    h = ad::batch_norm(h, gamma, beta, model.norms[l].running_mean, model.norms[l].running_var, mode,
                       kBatchNormEpsilon, &bm);
    if (moments != nullptr && mode == ad::Mode::train) moments->push_back(std::move(bm));
    h = ad::relu(h);
  }
  const std::size_t o = 4 * model.hidden.size();
  h = ad::add_row(ad::matmul(h, ad::transpose(bound.catalyser[o])), bound.catalyser[o + 1]);
  return ad::block_l2_normalize(h, c.block_size);
}

ad::Var quantise_soft(const ad::Var& y, std::span<const ad::Var> quantiser, int block_size) {
  const auto M = static_cast<Eigen::Index>(quantiser.size());
  require(M >= 1 && y.cols() == M * block_size, "quantise_soft: embedding width != M*K");
  std::vector<ad::Var> logits;
  for (Eigen::Index m = 0; m < M; ++m) {
    const ad::Var& w = quantiser[static_cast<std::size_t>(m)];
    require(w.rows() == block_size && w.cols() == block_size, "quantise_soft: W_m must be KxK");
    logits.push_back(ad::matmul(ad::slice_cols(y, m * block_size, block_size), ad::transpose(w)));
  }
  return ad::block_softmax(ad::concat_cols(logits), block_size);
}

NetworkOutput forward_eval(const ModelParams& model, const Matrix& x) {
  NetworkOutput out;
  out.y = embed(model, x);
  out.z = quantise_soft(out.y, model.quantiser, model.config.block_size);
  out.b = quantise_hard(out.y, model.quantiser, model.config.block_size);
  return out;
}

Matrix embed(const ModelParams& model, const Matrix& x) {
  ad::Tape tape;
  const BoundModel bound = bind(tape, model, false);
  return catalyse(model, bound, tape.constant(x), ad::Mode::eval).value();
}

CodeMatrix encode(const ModelParams& model, const Matrix& x) {
  return quantise_hard(embed(model, x), model.quantiser, model.config.block_size);
}

AdcTable<double> reconstruction_adc_table(const ModelParams& model, const Vector& y) {
  const int M = model.config.blocks;
  const int K = model.config.block_size;
  require(y.size() == model.config.code_dim(), "reconstruction_adc_table: embedding width != M*K");
  AdcTable<double> t{M, K, Matrix(M, K)};
  for (int m = 0; m < M; ++m) {
    const auto block = y.segment(static_cast<Eigen::Index>(m) * K, K);
    const Matrix& w = model.quantiser[static_cast<std::size_t>(m)];
    t.table.row(m) = (w.rowwise() - block.transpose()).rowwise().squaredNorm().transpose();
  }
  return t;
}

std::vector<SearchHit> reconstruction_search(const ModelParams& model, const Vector& y, const CodeMatrix& codes,
                                             std::size_t n) {
  return search(reconstruction_adc_table(model, y), codes, n);
}

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& model, const AdamState* catalyser_optimizer,
                                               const AdamState* quantiser_optimizer) {
  ByteWriter w;
  w.magic(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const CatalyserConfig& c = model.config;
  w.u32(static_cast<std::uint32_t>(c.input_dim));
  w.u32(static_cast<std::uint32_t>(c.hidden_width));
  w.u32(static_cast<std::uint32_t>(c.hidden_layers));
  w.u32(static_cast<std::uint32_t>(c.blocks));
  w.u32(static_cast<std::uint32_t>(c.block_size));
  for (const Matrix* p : model.catalyser_parameters()) w.matrix(*p);
  for (const NormLayer& n : model.norms) {
    w.matrix(n.running_mean);
    w.matrix(n.running_var);
  }
  for (const Matrix* p : model.quantiser_parameters()) w.matrix(*p);
  const std::uint32_t flags = (catalyser_optimizer ? 1U : 0U) | (quantiser_optimizer ? 2U : 0U);
  w.u32(flags);
  if (catalyser_optimizer) write_adam(w, *catalyser_optimizer);
  if (quantiser_optimizer) write_adam(w, *quantiser_optimizer);
  return w.take();
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes, const CatalyserConfig* expected) {
  ByteReader r(bytes);
  r.expect_magic(kCheckpointMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  CatalyserConfig c;
  c.input_dim = r.u32();
  c.hidden_width = r.u32();
  c.hidden_layers = static_cast<int>(r.u32());
  c.blocks = static_cast<int>(r.u32());
  c.block_size = static_cast<int>(r.u32());
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what(), 8);
  }
  if (expected != nullptr && !(*expected == c)) {
    throw FormatError("checkpoint architecture mismatch: file has d_in=" + std::to_string(c.input_dim) +
                      " h=" + std::to_string(c.hidden_width) + " layers=" + std::to_string(c.hidden_layers) +
                      " M=" + std::to_string(c.blocks) + " K=" + std::to_string(c.block_size) +
                      ", expected d_in=" + std::to_string(expected->input_dim) + " h=" +
                      std::to_string(expected->hidden_width) + " layers=" + std::to_string(expected->hidden_layers) +
                      " M=" + std::to_string(expected->blocks) + " K=" + std::to_string(expected->block_size));
  }

  // Shapes come from a freshly initialized model of the same architecture.
  Checkpoint ck;
  ck.model = init_model(c, 0);
  for (Matrix* p : ck.model.catalyser_parameters()) *p = r.matrix(p->rows(), p->cols(), "catalyser parameter");
  for (NormLayer& n : ck.model.norms) {
    n.running_mean = r.matrix(1, n.running_mean.size(), "running mean");
    n.running_var = r.matrix(1, n.running_var.size(), "running variance");
  }
  for (Matrix* p : ck.model.quantiser_parameters()) *p = r.matrix(p->rows(), p->cols(), "quantiser matrix");
  const std::uint32_t flags = r.u32();
  if (flags & 1U) {
    const auto params = std::as_const(ck.model).catalyser_parameters();
    ck.catalyser_optimizer = read_adam(r, params, "catalyser");
  }
  if (flags & 2U) {
    const auto params = std::as_const(ck.model).quantiser_parameters();
    ck.quantiser_optimizer = read_adam(r, params, "quantiser");
  }
  r.expect_end();
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& model, const AdamState* catalyser_optimizer,
                     const AdamState* quantiser_optimizer) {
  write_file_bytes(path, serialize_checkpoint(model, catalyser_optimizer, quantiser_optimizer));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const CatalyserConfig* expected) {
  return parse_checkpoint(read_file_bytes(path), expected);
}

}  // namespace sphash
