#include "sphash/training.hpp"

#include "sphash/codec.hpp"
#include "sphash/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

namespace sphash {

NegativeMining parse_negative_mining(const std::string& name) {
  if (name == "uniform") return NegativeMining::uniform;
  if (name == "semi-hard" || name == "semi_hard" || name == "semihard") return NegativeMining::semi_hard;
  throw ContractError("unknown negative mining strategy '" + name + "' (expected uniform or semi-hard)");
}

std::string to_string(NegativeMining mining) {
  return mining == NegativeMining::uniform ? "uniform" : "semi-hard";
}

TripletSampler::TripletSampler(NeighbourTable neighbours, NegativeMining mining, std::uint64_t seed)
    : neighbours_(std::move(neighbours)), mining_(mining), rng_(seed) {
  const std::size_t n = neighbours_.rows.size();
  for (std::size_t i = 0; i < n; ++i) {
    auto& row = neighbours_.rows[i];
    row.erase(std::remove_if(row.begin(), row.end(),
                             [&](std::int32_t j) { return j < 0 || static_cast<std::size_t>(j) >= n || j == static_cast<std::int32_t>(i); }),
              row.end());
    if (!row.empty()) eligible_.push_back(i);
  }
  if (eligible_.size() < n) {
    std::cerr << "warning: " << (n - eligible_.size()) << " of " << n
              << " points have no neighbours and are skipped as anchors\n";
  }
}

bool TripletSampler::is_neighbour(std::size_t anchor, std::size_t candidate) const {
  const auto& row = neighbours_.rows[anchor];
  return std::find(row.begin(), row.end(), static_cast<std::int32_t>(candidate)) != row.end();
}

std::size_t TripletSampler::uniform_negative(std::size_t anchor) {
  const std::size_t n = neighbours_.rows.size();
  require(n > neighbours_.rows[anchor].size() + 1, "TripletSampler: no admissible negative for an anchor");
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (;;) {
    const std::size_t c = pick(rng_);
    if (c != anchor && !is_neighbour(anchor, c)) return c;
  }
}

TripletSampler::Draw TripletSampler::draw(std::size_t batch, const Embedder& embed, double margin) {
  require(batch >= 1, "TripletSampler::draw: batch must be positive");
  require(batch <= eligible_.size(), "TripletSampler::draw: batch " + std::to_string(batch) + " exceeds " +
                                         std::to_string(eligible_.size()) + " eligible anchors");
  Draw d;
  // Partial Fisher-Yates over the eligible list gives anchors without replacement.
  std::vector<std::size_t> pool = eligible_;
  for (std::size_t i = 0; i < batch; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng_)]);
    const std::size_t a = pool[i];
    const auto& row = neighbours_.rows[a];
    std::uniform_int_distribution<std::size_t> pos(0, row.size() - 1);
    d.anchors.push_back(a);
    d.positives.push_back(static_cast<std::size_t>(row[pos(rng_)]));
    d.negatives.push_back(uniform_negative(a));
  }
  if (mining_ == NegativeMining::uniform) return d;
  require(static_cast<bool>(embed), "TripletSampler::draw: semi-hard mining needs an embedder");

  // Candidate pool: the uniform negatives drawn above, shared by every anchor.
  std::vector<std::size_t> ids;
  ids.insert(ids.end(), d.anchors.begin(), d.anchors.end());
  ids.insert(ids.end(), d.positives.begin(), d.positives.end());
  ids.insert(ids.end(), d.negatives.begin(), d.negatives.end());
  const Matrix e = embed(ids);
  require(e.rows() == static_cast<Eigen::Index>(ids.size()), "TripletSampler: embedder returned wrong row count");
  const auto B = static_cast<Eigen::Index>(batch);
  for (Eigen::Index i = 0; i < B; ++i) {
    const std::size_t a = d.anchors[static_cast<std::size_t>(i)];
    const double d_ap = (e.row(i) - e.row(B + i)).norm();
    double best = std::numeric_limits<double>::infinity();
    std::size_t chosen = d.negatives[static_cast<std::size_t>(i)];
    for (Eigen::Index c = 0; c < B; ++c) {
      const std::size_t cand = d.negatives[static_cast<std::size_t>(c)];
      if (cand == a || is_neighbour(a, cand)) continue;
      const double d_an = (e.row(i) - e.row(2 * B + c)).norm();
      // Semi-hard: farther than the positive but still inside the margin.
      if (d_an > d_ap && d_an < d_ap + margin && d_an < best) {
        best = d_an;
        chosen = cand;
      }
    }
    d.negatives[static_cast<std::size_t>(i)] = chosen;
  }
  return d;
}

Minibatch make_minibatch(const Matrix& features, const TripletSampler::Draw& draw) {
  const std::size_t B = draw.anchors.size();
  require(draw.positives.size() == B && draw.negatives.size() == B, "make_minibatch: ragged draw");
  Minibatch mb;
  mb.inputs.resize(static_cast<Eigen::Index>(3 * B), features.cols());
  auto put = [&](std::size_t slot, std::size_t row) {
    require(row < static_cast<std::size_t>(features.rows()), "make_minibatch: point index out of range");
    mb.inputs.row(static_cast<Eigen::Index>(slot)) = features.row(static_cast<Eigen::Index>(row));
    mb.source_rows.push_back(row);
  };
  for (std::size_t i = 0; i < B; ++i) put(i, draw.anchors[i]);
  for (std::size_t i = 0; i < B; ++i) put(B + i, draw.positives[i]);
  for (std::size_t i = 0; i < B; ++i) put(2 * B + i, draw.negatives[i]);
  for (std::size_t i = 0; i < B; ++i) {
    mb.triplets.anchor.push_back(static_cast<Eigen::Index>(i));
    mb.triplets.positive.push_back(static_cast<Eigen::Index>(B + i));
    mb.triplets.negative.push_back(static_cast<Eigen::Index>(2 * B + i));
  }
  return mb;
}

Minibatch sample_minibatch(TripletSampler& sampler, const Matrix& features, std::size_t batch, const Embedder& embed,
                           double margin) {
  require(static_cast<std::size_t>(features.rows()) == sampler.point_count(),
          "sample_minibatch: feature rows do not match the neighbour table");
  return make_minibatch(features, sampler.draw(batch, embed, margin));
}

Optimizers make_optimizers(const ModelParams& model, const AdamConfig& config) {
  const auto a = model.catalyser_parameters();
  const auto b = model.quantiser_parameters();
  return {make_adam_state(a, config), make_adam_state(b, config)};
}

namespace {

std::vector<Matrix> collect_grads(const std::vector<ad::Var>& vars) {
  std::vector<Matrix> out;
  out.reserve(vars.size());
  for (const ad::Var& v : vars) out.push_back(v.grad());
  return out;
}

}  // namespace

RoutedGradients routed_gradients(const ModelParams& model, const Minibatch& batch, const LossWeights& weights) {
  weights.validate();
  require(batch.triplets.size() >= 2, "train_step: need at least 2 triplets");
  const int K = model.config.block_size;

  ad::Tape tape;
  const BoundModel bound = bind(tape, model, true);
  RoutedGradients out;
  const ad::Var y = catalyse(model, bound, tape.constant(batch.inputs), ad::Mode::train, &out.moments);
  const ad::Var z = quantise_soft(y, bound.quantiser, K);
  const ad::Var b = ad::straight_through_argmax(z, K);

  const auto& t = batch.triplets;
  const ad::Var y_a = ad::gather_rows(y, t.anchor);
  const ad::Var y_p = ad::gather_rows(y, t.positive);
  const ad::Var y_n = ad::gather_rows(y, t.negative);

  LossComponents c;
  c.tri_z = asymmetric_triplet_loss(ad::gather_rows(z, t.anchor), ad::gather_rows(b, t.positive),
                                    ad::gather_rows(b, t.negative), weights.margin_z, K);
  c.tri_y = triplet_loss(y_a, y_p, y_n, weights.margin_y);
  c.koleo_y = koleo_loss(y_a, weights.log_eps);
  c.koleo_w = koleo_w_loss(bound.quantiser, weights.log_eps);
  c.quant = quant_pull_loss(y_a, bound.quantiser, K);

  StepReport& r = out.report;
  r.tri_z = c.tri_z.scalar();
  r.tri_y = c.tri_y.scalar();
  r.koleo_y = c.koleo_y.scalar();
  r.koleo_w = c.koleo_w.scalar();
  r.quant = c.quant.scalar();
  r.total = total_objective_value(r.tri_z, r.tri_y, r.koleo_y, r.koleo_w, r.quant, weights);
  if (!std::isfinite(r.tri_z) || !std::isfinite(r.tri_y) || !std::isfinite(r.koleo_y) || !std::isfinite(r.koleo_w) ||
      !std::isfinite(r.quant)) {
    std::ostringstream msg;
    msg << "non-finite loss component: tri_z=" << r.tri_z << " tri_y=" << r.tri_y << " koleo_y=" << r.koleo_y
        << " koleo_w=" << r.koleo_w << " quant=" << r.quant;
    throw NumericalError(msg.str());
  }

  // Each group sees only its own objective.
  const ad::Var catalyser_objective =
      ad::sub(ad::add(c.tri_z, ad::scale(c.tri_y, weights.tri_y)), ad::scale(c.koleo_y, weights.koleo_y));
  const ad::Var quantiser_objective =
      ad::add(ad::sub(c.tri_z, ad::scale(c.koleo_w, weights.koleo_w)), ad::scale(c.quant, weights.quant));
  r.catalyser_objective = catalyser_objective.scalar();
  r.quantiser_objective = quantiser_objective.scalar();

  tape.backward(catalyser_objective);
  out.catalyser = collect_grads(bound.catalyser);
  tape.backward(quantiser_objective);
  out.quantiser = collect_grads(bound.quantiser);
  return out;
}

StepReport train_step(ModelParams& model, Optimizers& optimizers, const Minibatch& batch, const LossWeights& weights) {
  RoutedGradients g = routed_gradients(model, batch, weights);
  for (const auto* group : {&g.catalyser, &g.quantiser}) {
    for (const Matrix& m : *group) {
      if (!m.allFinite()) throw NumericalError("non-finite gradient");
    }
  }
  auto a = model.catalyser_parameters();
  auto q = model.quantiser_parameters();
  adam_step(optimizers.catalyser, a, g.catalyser);
  adam_step(optimizers.quantiser, q, g.quantiser);
  renormalize_quantiser_rows(model);
  update_running_stats(model, g.moments, batch.inputs.rows());
  return g.report;
}

std::vector<double> code_histogram_entropies(const CodeMatrix& codes, int K) {
  std::vector<double> out;
  if (codes.rows() == 0) return out;
  for (Eigen::Index m = 0; m < codes.cols(); ++m) {
    std::vector<double> hist(static_cast<std::size_t>(K), 0.0);
    for (Eigen::Index i = 0; i < codes.rows(); ++i) hist[codes(i, m)] += 1.0;
    double h = 0.0;
    for (double c : hist) {
      if (c > 0.0) {
        const double p = c / static_cast<double>(codes.rows());
        h -= p * std::log2(p);
      }
    }
    out.push_back(h);
  }
  return out;
}

double code_histogram_entropy(const CodeMatrix& codes, int K) {
  const auto per_block = code_histogram_entropies(codes, K);
  if (per_block.empty()) return 0.0;
  return std::accumulate(per_block.begin(), per_block.end(), 0.0) / static_cast<double>(per_block.size());
}

std::string training_log_header() {
  return "kind,epoch,step,tri_z,tri_y,koleo_y,koleo_w,quant,total,block_entropy,batch_entropy,code_entropy,"
         "validation_recall";
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct ValidationSet {
  Matrix queries;
  Matrix database;
  std::vector<std::int32_t> first_neighbour;
};

EpochDiagnostics diagnose(const ModelParams& model, const Matrix& train_features, const ValidationSet& val, int epoch) {
  const int K = model.config.block_size;
  EpochDiagnostics d;
  d.epoch = epoch;
  const NetworkOutput train_out = forward_eval(model, train_features);
  d.code_entropy = code_histogram_entropy(train_out.b, K);
  double h = 0.0;
  for (Eigen::Index i = 0; i < train_out.z.rows(); ++i) h += block_entropy(train_out.z.row(i), K);
  d.block_entropy = train_out.z.rows() > 0 ? h / static_cast<double>(train_out.z.rows()) : 0.0;
  d.batch_entropy = train_out.z.rows() > 0 ? batch_block_entropy(train_out.z, K) : 0.0;

  if (val.queries.rows() > 0 && val.database.rows() >= 10) {
    const CodeMatrix db = encode(model, val.database);
    const Matrix yq = embed(model, val.queries);
    std::vector<std::vector<std::uint32_t>> ranked;
    for (Eigen::Index q = 0; q < yq.rows(); ++q) {
      std::vector<std::uint32_t> ids;
      for (const SearchHit& hit : reconstruction_search(model, yq.row(q).transpose(), db, 10)) {
        ids.push_back(hit.index);
      }
      ranked.push_back(std::move(ids));
    }
    d.validation_recall = recall_at(ranked, val.first_neighbour, 10);
  }
  return d;
}

}  // namespace

TrainingResult train(const TrainingConfig& config, const VectorSet& data, std::ostream* log,
                     const FeatureExtractor& features) {
  config.network.validate();
  config.weights.validate();
  require(config.batch_size >= 2, "train: batch size must be at least 2");
  require(config.epochs >= 0, "train: epochs must be non-negative");
  require(config.validation_fraction >= 0.0 && config.validation_fraction < 1.0,
          "train: validation fraction must lie in [0, 1)");

  const Matrix all = features(data.data.cast<double>());
  require(all.cols() == config.network.input_dim, "train: feature dim " + std::to_string(all.cols()) +
                                                      " != network input dim " +
                                                      std::to_string(config.network.input_dim));

  // Hold out a validation slice; the rest trains and doubles as the validation database.
  std::mt19937_64 split_rng(config.seed ^ 0x5bd1e995ULL);
  std::vector<std::size_t> order(static_cast<std::size_t>(all.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_val = static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(all.rows())));
  std::vector<std::size_t> val_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_rows(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val_rows.begin(), val_rows.end());
  std::sort(train_rows.begin(), train_rows.end());

  Matrix train_x(static_cast<Eigen::Index>(train_rows.size()), all.cols());
  for (std::size_t i = 0; i < train_rows.size(); ++i) train_x.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(train_rows[i]));
  ValidationSet val;
  val.queries.resize(static_cast<Eigen::Index>(val_rows.size()), all.cols());
  for (std::size_t i = 0; i < val_rows.size(); ++i) val.queries.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(val_rows[i]));
  val.database = train_x;

  VectorSet train_set;
  train_set.dim = train_x.cols();
  train_set.data = train_x.cast<float>();
  require(static_cast<std::size_t>(train_x.rows()) > config.neighbours + 1, "train: too few training points");
  if (val.queries.rows() > 0) {
    VectorSet qs;
    qs.dim = val.queries.cols();
    qs.data = val.queries.cast<float>();
    for (const auto& row : brute_force_neighbours(qs, train_set, 1).rows) val.first_neighbour.push_back(row.front());
  }

  // The neighbour graph is defined on the extracted features.
  TripletSampler sampler(self_neighbours(train_set, config.neighbours), config.mining, config.seed);
  const std::size_t batch = std::min(config.batch_size, sampler.eligible_count());
  const std::size_t steps = config.steps_per_epoch > 0 ? config.steps_per_epoch
                                                       : std::max<std::size_t>(1, sampler.eligible_count() / batch);

  TrainingResult result;
  ModelParams model = init_model(config.network, config.seed);
  result.optimizers = make_optimizers(model, config.adam);
  result.model = model;
  if (log != nullptr) *log << training_log_header() << '\n';

  Embedder embedder;
  if (config.mining == NegativeMining::semi_hard) {
    embedder = [&](std::span<const std::size_t> ids) {
      Matrix x(static_cast<Eigen::Index>(ids.size()), train_x.cols());
      for (std::size_t i = 0; i < ids.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = train_x.row(static_cast<Eigen::Index>(ids[i]));
      return embed(model, x);
    };
  }

  std::size_t global_step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t s = 0; s < steps; ++s, ++global_step) {
      const Minibatch mb = sample_minibatch(sampler, train_x, batch, embedder, config.weights.margin_y);
      const StepReport r = train_step(model, result.optimizers, mb, config.weights);
      result.steps.push_back(r);
      if (log != nullptr) {
        *log << "step," << epoch << ',' << global_step << ',' << fmt(r.tri_z) << ',' << fmt(r.tri_y) << ','
             << fmt(r.koleo_y) << ',' << fmt(r.koleo_w) << ',' << fmt(r.quant) << ',' << fmt(r.total) << ",,,,\n";
      }
    }
    const EpochDiagnostics d = diagnose(model, train_x, val, epoch);
    result.epochs.push_back(d);
    if (log != nullptr) {
      *log << "epoch," << epoch << ',' << global_step << ",,,,,,," << fmt(d.block_entropy) << ','
           << fmt(d.batch_entropy) << ',' << fmt(d.code_entropy) << ',' << fmt(d.validation_recall) << '\n';
    }
    // Without a validation slice the latest epoch wins.
    if (val.queries.rows() == 0 || result.best_epoch < 0 || d.validation_recall > result.best_validation_recall) {
      result.best_epoch = epoch;
      result.best_validation_recall = d.validation_recall;
      result.model = model;
    }
  }
  return result;
}

}  // namespace sphash
