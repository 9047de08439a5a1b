#pragma once

#include "sphash/adam.hpp"
#include "sphash/autodiff.hpp"
#include "sphash/codec.hpp"
#include "sphash/types.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace sphash {

/// Catalyser MLP plus the block quantiser. The output embedding has M blocks of K entries.
struct CatalyserConfig {
  Eigen::Index input_dim = 128;
  Eigen::Index hidden_width = 256;
  int hidden_layers = 2;
  int blocks = 4;       // M
  int block_size = 16;  // K

  Eigen::Index code_dim() const { return static_cast<Eigen::Index>(blocks) * block_size; }
  void validate() const;
  bool operator==(const CatalyserConfig&) const = default;
};

struct DenseLayer {
  Matrix weight;  // out x in
  Matrix bias;    // 1 x out
};

struct NormLayer {
  Matrix gamma;  // 1 x C
  Matrix beta;   // 1 x C
  Eigen::RowVectorXd running_mean;
  Eigen::RowVectorXd running_var;
};

inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kBatchNormEpsilon = 1e-5;

struct ModelParams {
  CatalyserConfig config;
  std::vector<DenseLayer> hidden;
  std::vector<NormLayer> norms;
  DenseLayer output;
  /// One K x K matrix per block; rows are unit-norm.
  std::vector<Matrix> quantiser;

  /// Trainable catalyser tensors in a fixed order: per hidden layer (W, b, gamma, beta), then output (W, b).
  std::vector<Matrix*> catalyser_parameters();
  std::vector<const Matrix*> catalyser_parameters() const;
  std::vector<Matrix*> quantiser_parameters();
  std::vector<const Matrix*> quantiser_parameters() const;
};

/// He-normal hidden layers, unit BN scale, quantiser rows uniform on the sphere.
ModelParams init_model(const CatalyserConfig& config, std::uint64_t seed);

/// Projects every quantiser row back onto the unit sphere.
void renormalize_quantiser_rows(ModelParams& model);

/// Applies exponential running-average updates from one training batch.
void update_running_stats(ModelParams& model, std::span<const ad::BatchMoments> moments, Eigen::Index batch_size);

/// Feature extractor in front of the catalyser. The pipeline uses the identity on raw descriptors;
/// precomputed embeddings can be plugged in by supplying another function.
using FeatureExtractor = std::function<Matrix(const Matrix&)>;
inline Matrix identity_features(const Matrix& x) { return x; }

/// Model parameters registered as leaves on a tape, in catalyser_parameters()/quantiser_parameters() order.
struct BoundModel {
  std::vector<ad::Var> catalyser;
  std::vector<ad::Var> quantiser;
};

BoundModel bind(ad::Tape& tape, const ModelParams& model, bool tracked = true);

/// y: per-block unit-norm embedding. In train mode `moments` receives the per-layer batch statistics.
ad::Var catalyse(const ModelParams& model, const BoundModel& bound, const ad::Var& x, ad::Mode mode,
                 std::vector<ad::BatchMoments>* moments = nullptr);

/// z: blockwise softmax of W_m y^(m).
ad::Var quantise_soft(const ad::Var& y, std::span<const ad::Var> quantiser, int block_size);

/// Block logits W_m y^(m) for every row of y.
template <typename Derived>
MatrixX<typename Derived::Scalar> quantiser_logits(const Eigen::MatrixBase<Derived>& y,
                                                   std::span<const Matrix> quantiser, int K) {
  using Scalar = typename Derived::Scalar;
  const auto M = static_cast<Eigen::Index>(quantiser.size());
  require(y.cols() == M * K, "quantiser_logits: embedding width != M*K");
  MatrixX<Scalar> logits(y.rows(), y.cols());
  for (Eigen::Index m = 0; m < M; ++m) {
    require(quantiser[static_cast<std::size_t>(m)].rows() == K && quantiser[static_cast<std::size_t>(m)].cols() == K,
            "quantiser_logits: W_m must be KxK");
    logits.middleCols(m * K, K).noalias() =
        y.middleCols(m * K, K) * quantiser[static_cast<std::size_t>(m)].template cast<Scalar>().transpose();
  }
  return logits;
}

/// Blockwise softmax of the quantiser logits.
template <typename Derived>
MatrixX<typename Derived::Scalar> quantise_soft(const Eigen::MatrixBase<Derived>& y, std::span<const Matrix> quantiser,
                                                int K) {
  auto z = quantiser_logits(y, quantiser, K);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index m = 0; m * K < z.cols(); ++m) {
      auto b = z.row(i).segment(m * K, K);
      b = (b.array() - b.maxCoeff()).exp().matrix();
      b /= b.sum();
    }
  }
  return z;
}

/// Index of the largest entry in each K-block of each row (lowest index on ties).
template <typename Derived>
CodeMatrix block_argmax(const Eigen::MatrixBase<Derived>& scores, int K) {
  require(K > 0 && scores.cols() % K == 0, "block_argmax: width is not a multiple of K");
  const Eigen::Index M = scores.cols() / K;
  CodeMatrix codes(scores.rows(), M);
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    for (Eigen::Index m = 0; m < M; ++m) {
      Eigen::Index best = 0;
      scores.row(i).segment(m * K, K).maxCoeff(&best);
      codes(i, m) = static_cast<std::uint32_t>(best);
    }
  }
  return codes;
}

/// b^(m) = argmax_k (W_m y^(m))_k.
template <typename Derived>
CodeMatrix quantise_hard(const Eigen::MatrixBase<Derived>& y, std::span<const Matrix> quantiser, int K) {
  return block_argmax(quantiser_logits(y, quantiser, K), K);
}

struct NetworkOutput {
  Matrix y;
  Matrix z;
  CodeMatrix b;
};

/// Eval-mode forward pass (running BN statistics), without gradients.
NetworkOutput forward_eval(const ModelParams& model, const Matrix& x);
Matrix embed(const ModelParams& model, const Matrix& x);
CodeMatrix encode(const ModelParams& model, const Matrix& x);

/// table(m, k) = ||y^(m) - W_m[k]||^2: the distance from a query embedding to the
/// reconstruction of a database code on the quantiser rows.
AdcTable<double> reconstruction_adc_table(const ModelParams& model, const Vector& y);

/// Exhaustive scan ranking database codes by their reconstruction distance to `y`.
std::vector<SearchHit> reconstruction_search(const ModelParams& model, const Vector& y, const CodeMatrix& codes,
                                             std::size_t n);

struct Checkpoint {
  ModelParams model;
  std::optional<AdamState> catalyser_optimizer;
  std::optional<AdamState> quantiser_optimizer;
};

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& model, const AdamState* catalyser_optimizer = nullptr,
                                               const AdamState* quantiser_optimizer = nullptr);
/// Rejects bad magic, unknown versions, and (when `expected` is given) a differing architecture.
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes, const CatalyserConfig* expected = nullptr);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& model,
                     const AdamState* catalyser_optimizer = nullptr, const AdamState* quantiser_optimizer = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path, const CatalyserConfig* expected = nullptr);

}  // namespace sphash
