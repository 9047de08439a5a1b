#include "sphash/network.hpp"

#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <random>

using namespace sphash;
using Catch::Approx;

namespace {

CatalyserConfig small_config(int M = 3, int K = 4) {
  CatalyserConfig c;
  c.input_dim = 6;
  c.hidden_width = 10;
  c.hidden_layers = 2;
  c.blocks = M;
  c.block_size = K;
  return c;
}

Matrix inputs(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return testing::random_matrix(n, d, rng);
}

}  // namespace

TEST_CASE("config validation") {
  CatalyserConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  CHECK(c.code_dim() == 12);
  c.block_size = 1;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = small_config();
  c.blocks = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
}

TEST_CASE("init: shapes and unit quantiser rows") {
  const ModelParams m = init_model(small_config(), 3);
  REQUIRE(m.hidden.size() == 2);
  CHECK(m.hidden[0].weight.rows() == 10);
  CHECK(m.hidden[0].weight.cols() == 6);
  CHECK(m.output.weight.rows() == 12);
  REQUIRE(m.quantiser.size() == 3);
  for (const Matrix& w : m.quantiser) {
    CHECK(w.rows() == 4);
    CHECK(w.cols() == 4);
    CHECK((w.rowwise().norm().array() - 1.0).abs().maxCoeff() < 1e-12);
  }
  // Parameter groups are disjoint and cover everything trainable.
  ModelParams mm = m;
  auto a = mm.catalyser_parameters();
  auto b = mm.quantiser_parameters();
  CHECK(a.size() == 2 * 4 + 2);
  CHECK(b.size() == 3);
  for (Matrix* p : a) {
    for (Matrix* q : b) CHECK(p != q);
  }
}

TEST_CASE("forward: block norms, simplex blocks and argmax codes") {
  const ModelParams m = init_model(small_config(), 5);
  const NetworkOutput out = forward_eval(m, inputs(40, 6, 1));
  for (Eigen::Index i = 0; i < 40; ++i) {
    for (int b = 0; b < 3; ++b) {
      CHECK(std::abs(out.y.row(i).segment(b * 4, 4).norm() - 1.0) < 1e-9);
      const auto z = out.z.row(i).segment(b * 4, 4);
      CHECK((z.array() >= 0).all());
      CHECK(std::abs(z.sum() - 1.0) < 1e-9);
      Eigen::Index best = 0;
      z.maxCoeff(&best);
      CHECK(out.b(i, b) == static_cast<std::uint32_t>(best));
    }
  }
  CHECK_THROWS_AS(forward_eval(m, inputs(3, 5, 1)), ContractError);
  CHECK_THROWS_AS(forward_eval(m, Matrix(0, 6)), ContractError);
}

TEST_CASE("forward: all-zero weights take the normalization guard") {
  ModelParams m = init_model(small_config(), 5);
  for (Matrix* p : m.catalyser_parameters()) p->setZero();
  const Matrix y = embed(m, inputs(4, 6, 2));
  CHECK(y.allFinite());
  CHECK(y.isZero());
}

TEST_CASE("forward: output block (3,4,0,0) normalizes to (0.6,0.8,0,0)") {
  CatalyserConfig c = small_config(1, 4);
  c.hidden_layers = 0;
  ModelParams m = init_model(c, 1);
  m.output.weight.setZero();
  m.output.bias = (Matrix(1, 4) << 3, 4, 0, 0).finished();
  const Matrix y = embed(m, inputs(2, 6, 3));
  CHECK(y(0, 0) == Approx(0.6));
  CHECK(y(0, 1) == Approx(0.8));
  CHECK(y(1, 2) == 0.0);
}

TEST_CASE("train mode: first hidden pre-activation is batch-centred") {
  const ModelParams m = init_model(small_config(), 8);
  ad::Tape tape;
  const BoundModel bound = bind(tape, m, false);
  std::vector<ad::BatchMoments> moments;
  (void)catalyse(m, bound, tape.constant(inputs(64, 6, 4)), ad::Mode::train, &moments);
  REQUIRE(moments.size() == 2);
  // Normalizing the first layer's pre-activations with its own moments centres them.
  const Matrix x = inputs(64, 6, 4);
  Matrix pre = x * m.hidden[0].weight.transpose();
  pre.rowwise() += m.hidden[0].bias.row(0);
  const Matrix normed = (pre.rowwise() - moments[0].mean).array().rowwise() / (moments[0].variance.array() + 1e-5).sqrt();
  CHECK(normed.colwise().mean().cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("quantise_soft: identity rows and symmetric inputs") {
  const Matrix W = Matrix::Identity(4, 4);
  const std::vector<Matrix> q{W};
  Matrix y = Matrix::Zero(1, 4);
  y(0, 1) = 1.0;  // e_2 in one-based terms
  const Matrix z = quantise_soft(y, q, 4);
  Eigen::Index best = 0;
  z.row(0).maxCoeff(&best);
  CHECK(best == 1);
  Matrix e = Matrix::Zero(1, 4);
  e(0, 1) = 1.0;
  const Eigen::RowVectorXd expected = (e.array().exp() / e.array().exp().sum()).matrix();
  CHECK((z.row(0) - expected).cwiseAbs().maxCoeff() < 1e-15);

  const Matrix centre = Matrix::Constant(1, 4, 0.5);
  const Matrix u = quantise_soft(centre, q, 4);
  CHECK((u.array() - 0.25).abs().maxCoeff() < 1e-15);
}

TEST_CASE("argmax picks the row with the smallest angle") {
  std::mt19937_64 rng(12);
  const std::vector<Matrix> q{testing::unit_blocks(testing::random_matrix(6, 6, rng), 6)};
  const Matrix y = testing::unit_blocks(testing::random_matrix(1000, 6, rng), 6);
  const CodeMatrix hard = quantise_hard(y, q, 6);
  const Matrix soft = quantise_soft(y, q, 6);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    Eigen::Index best_angle = 0;
    double smallest = 10.0;
    for (Eigen::Index k = 0; k < 6; ++k) {
      const double angle = std::acos(std::clamp(q[0].row(k).dot(y.row(i)), -1.0, 1.0));
      if (angle < smallest) {
        smallest = angle;
        best_angle = k;
      }
    }
    Eigen::Index best_soft = 0;
    soft.row(i).maxCoeff(&best_soft);
    CHECK(hard(i, 0) == static_cast<std::uint32_t>(best_angle));
    CHECK(hard(i, 0) == static_cast<std::uint32_t>(best_soft));
  }
}

TEST_CASE("block argmax: examples, ties and scale invariance") {
  CHECK(block_argmax((Matrix(1, 3) << 0.2, 0.9, -0.1).finished(), 3)(0, 0) == 1);
  CHECK(block_argmax(Matrix::Constant(1, 3, 0.4), 3)(0, 0) == 0);
  std::mt19937_64 rng(2);
  const std::vector<Matrix> q{testing::unit_blocks(testing::random_matrix(4, 4, rng), 4),
                              testing::unit_blocks(testing::random_matrix(4, 4, rng), 4)};
  const Matrix y = testing::unit_blocks(testing::random_matrix(200, 8, rng), 4);
  Matrix scaled = y;
  scaled.leftCols(4) *= 3.7;
  scaled.rightCols(4) *= 0.01;
  CHECK(quantise_hard(y, q, 4) == quantise_hard(scaled, q, 4));
}

TEST_CASE("renormalizing unit rows leaves codes unchanged") {
  ModelParams m = init_model(small_config(), 9);
  const Matrix x = inputs(100, 6, 7);
  const CodeMatrix before = encode(m, x);
  renormalize_quantiser_rows(m);
  CHECK(encode(m, x) == before);
  m.quantiser[0] *= 2.0;
  renormalize_quantiser_rows(m);
  CHECK((m.quantiser[0].rowwise().norm().array() - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("reconstruction table is the distance to the decoded code") {
  const ModelParams m = init_model(small_config(), 4);
  const Matrix y = embed(m, inputs(1, 6, 3));
  const auto t = reconstruction_adc_table(m, y.row(0).transpose());
  Code code(3);
  code << 2, 0, 3;
  Eigen::RowVectorXd decoded(12);
  for (int b = 0; b < 3; ++b) decoded.segment(b * 4, 4) = m.quantiser[static_cast<std::size_t>(b)].row(code(b));
  CHECK(adc_distance(t, code) == Approx((y.row(0) - decoded).norm()).epsilon(1e-12));
}

TEST_CASE("checkpoint: roundtrip, corruption and architecture mismatch") {
  ModelParams m = init_model(small_config(), 11);
  m.norms[0].running_mean.setRandom();
  m.norms[1].running_var.setConstant(2.5);
  AdamState a = make_adam_state(std::as_const(m).catalyser_parameters());
  AdamState b = make_adam_state(std::as_const(m).quantiser_parameters());
  a.step = 7;
  a.m[0].setConstant(0.25);
  b.v[1].setConstant(3.0);
  const auto bytes = serialize_checkpoint(m, &a, &b);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SPHC");
  const Checkpoint back = parse_checkpoint(bytes);
  CHECK(serialize_checkpoint(back.model, &*back.catalyser_optimizer, &*back.quantiser_optimizer) == bytes);
  CHECK(back.catalyser_optimizer->step == 7);
  CHECK(back.model.norms[1].running_var == m.norms[1].running_var);
  const Matrix x = inputs(30, 6, 1);
  CHECK(encode(back.model, x) == encode(m, x));

  auto bad = bytes;
  bad[1] = 'Q';
  CHECK_THROWS_AS(parse_checkpoint(bad), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(parse_checkpoint(truncated), FormatError);

  const CatalyserConfig other = small_config(4, 4);
  try {
    (void)parse_checkpoint(bytes, &other);
    FAIL("expected a mismatch error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("M") != std::string::npos);
  }

  const auto path = std::filesystem::temp_directory_path() / "sphash_ck_test.sphc";
  save_checkpoint(path, m);
  const Checkpoint disk = load_checkpoint(path);
  CHECK(!disk.catalyser_optimizer.has_value());
  CHECK(encode(disk.model, x) == encode(m, x));
  std::filesystem::remove(path);
}

TEST_CASE("init is deterministic in the seed") {
  const auto a = serialize_checkpoint(init_model(small_config(), 21));
  const auto b = serialize_checkpoint(init_model(small_config(), 21));
  const auto c = serialize_checkpoint(init_model(small_config(), 22));
  CHECK(a == b);
  CHECK(a != c);
}
