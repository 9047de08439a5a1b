#pragma once

#include "sphash/adam.hpp"
#include "sphash/data_io.hpp"
#include "sphash/losses.hpp"
#include "sphash/network.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace sphash {

enum class NegativeMining { uniform, semi_hard };

NegativeMining parse_negative_mining(const std::string& name);
std::string to_string(NegativeMining mining);

/// Maps point indices to their current embeddings (one row per index).
using Embedder = std::function<Matrix(std::span<const std::size_t>)>;

/// Draws (anchor, positive, negative) point triples from a neighbour graph.
/// Positives come from the anchor's list; negatives are never in it and never the anchor.
class TripletSampler {
 public:
  struct Draw {
    std::vector<std::size_t> anchors;
    std::vector<std::size_t> positives;
    std::vector<std::size_t> negatives;
  };

  TripletSampler(NeighbourTable neighbours, NegativeMining mining, std::uint64_t seed);

  /// Anchors are drawn without replacement among points with a non-empty neighbour list.
  /// Semi-hard mining needs `embed` and the triplet margin; otherwise negatives are uniform.
  Draw draw(std::size_t batch, const Embedder& embed = {}, double margin = 0.0);

  std::size_t point_count() const { return neighbours_.rows.size(); }
  std::size_t eligible_count() const { return eligible_.size(); }
  std::size_t skipped_count() const { return neighbours_.rows.size() - eligible_.size(); }
  NegativeMining mining() const { return mining_; }
  const NeighbourTable& neighbours() const { return neighbours_; }

 private:
  bool is_neighbour(std::size_t anchor, std::size_t candidate) const;
  std::size_t uniform_negative(std::size_t anchor);

  NeighbourTable neighbours_;
  std::vector<std::size_t> eligible_;
  NegativeMining mining_;
  std::mt19937_64 rng_;
};

/// Network inputs for one step: rows [0, B) anchors, [B, 2B) positives, [2B, 3B) negatives.
struct Minibatch {
  Matrix inputs;
  TripletBatch triplets;
  std::vector<std::size_t> source_rows;
};

Minibatch sample_minibatch(TripletSampler& sampler, const Matrix& features, std::size_t batch,
                           const Embedder& embed = {}, double margin = 0.0);

/// Builds a minibatch from explicit point indices.
Minibatch make_minibatch(const Matrix& features, const TripletSampler::Draw& draw);

struct Optimizers {
  AdamState catalyser;
  AdamState quantiser;
};

Optimizers make_optimizers(const ModelParams& model, const AdamConfig& config = {});

struct StepReport {
  double tri_z = 0;
  double tri_y = 0;
  double koleo_y = 0;
  double koleo_w = 0;
  double quant = 0;
  double total = 0;
  /// Objective whose gradient updates the catalyser: tri_z + l1 tri_y - l2 koleo_y.
  double catalyser_objective = 0;
  /// Objective whose gradient updates W: tri_z - l3 koleo_w + l4 quant.
  double quantiser_objective = 0;
};

/// Gradients of the two routed objectives, one per parameter group, without applying them.
struct RoutedGradients {
  std::vector<Matrix> catalyser;
  std::vector<Matrix> quantiser;
  std::vector<ad::BatchMoments> moments;
  StepReport report;
};

RoutedGradients routed_gradients(const ModelParams& model, const Minibatch& batch, const LossWeights& weights);

/// Forward, routed backward, Adam per group, W row projection, running-statistics update.
/// Throws NumericalError (listing every component) if any loss term is non-finite.
StepReport train_step(ModelParams& model, Optimizers& optimizers, const Minibatch& batch, const LossWeights& weights);

struct TrainingConfig {
  CatalyserConfig network;
  LossWeights weights;
  AdamConfig adam;
  std::size_t batch_size = 128;
  int epochs = 30;
  double validation_fraction = 0.05;
  std::size_t neighbours = 10;
  /// 0 means floor(train points / batch size).
  std::size_t steps_per_epoch = 0;
  NegativeMining mining = NegativeMining::uniform;
  std::uint64_t seed = 0;
};

struct EpochDiagnostics {
  int epoch = 0;
  /// Mean per-sample block entropy of the relaxed codes (bits).
  double block_entropy = 0;
  /// Block entropy of the batch-mean relaxed code (bits).
  double batch_entropy = 0;
  /// Mean over blocks of the entropy of the empirical hard-code histogram (bits).
  double code_entropy = 0;
  double validation_recall = 0;
};

struct TrainingResult {
  /// Parameters from the epoch with the best validation recall (initialization if no epoch ran).
  ModelParams model;
  Optimizers optimizers;
  std::vector<StepReport> steps;
  std::vector<EpochDiagnostics> epochs;
  int best_epoch = -1;
  double best_validation_recall = 0;
};

/// Column header of the training log CSV.
std::string training_log_header();

/// Runs the full loop. When `log` is given, writes the CSV header, one row per step and one per epoch.
TrainingResult train(const TrainingConfig& config, const VectorSet& data, std::ostream* log = nullptr,
                     const FeatureExtractor& features = identity_features);

/// Mean over blocks of the Shannon entropy (bits) of each block's empirical index histogram.
double code_histogram_entropy(const CodeMatrix& codes, int K);

/// Per-block histogram entropies, in bits.
std::vector<double> code_histogram_entropies(const CodeMatrix& codes, int K);

}  // namespace sphash
