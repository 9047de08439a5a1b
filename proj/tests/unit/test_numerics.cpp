#include "sphash/adam.hpp"
#include "sphash/autodiff.hpp"

#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <random>

using namespace sphash;
using namespace sphash::ad;
using Catch::Approx;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

// Finite-difference check of a scalar function of one matrix input built on the tape.
void check_op(const std::string& name, Matrix x, const std::function<Var(const Var&)>& build) {
  Tape tape;
  const Var v = tape.variable(x);
  const Var loss = build(v);
  tape.backward(loss);
  const Matrix analytic = v.grad();
  auto f = [&] {
    Tape t;
    return build(t.constant(x)).scalar();
  };
  const Matrix numeric = testing::central_difference(f, x);
  testing::GradientCheck check;
  testing::compare_gradient(check, name, analytic, numeric);
  INFO(check.first_failure);
  CHECK(check.ok());
}

// Fixed random weights turn a matrix output into a generic scalar.
Var project(const Var& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Matrix w = testing::random_matrix(out.rows(), out.cols(), rng);
  return sum(mul(out, out.tape()->constant(w)));
}

}  // namespace

TEST_CASE("forward primitives: small exact values") {
  Tape t;
  const Matrix s = block_softmax(t.constant(row({0, 0, 0})), 3).value();
  CHECK(s(0, 0) == Approx(1.0 / 3));
  CHECK(s(0, 2) == Approx(1.0 / 3));
  const Matrix r = relu(t.constant(row({-1, 2}))).value();
  CHECK(r(0, 0) == 0.0);
  CHECK(r(0, 1) == 2.0);
  const Matrix n = block_l2_normalize(t.constant(row({3, 4})), 2).value();
  CHECK(n(0, 0) == Approx(0.6).epsilon(1e-15));
  CHECK(n(0, 1) == Approx(0.8).epsilon(1e-15));
  const Matrix zero = block_l2_normalize(t.constant(row({0, 0})), 2).value();
  CHECK(zero.allFinite());
  CHECK(zero.isZero());
}

TEST_CASE("softmax rows are positive and sum to one") {
  std::mt19937_64 rng(1);
  Tape t;
  const Matrix s = block_softmax(t.constant(testing::random_matrix(50, 12, rng, 10.0)), 4).value();
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    for (Eigen::Index b = 0; b < 12; b += 4) {
      CHECK((s.row(i).segment(b, 4).array() > 0).all());
      CHECK(std::abs(s.row(i).segment(b, 4).sum() - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("backward: analytic examples") {
  Tape t;
  const Var p = t.variable(row({1, 2}));
  t.backward(sum(mul(p, p)));
  CHECK(p.grad()(0, 0) == 2.0);
  CHECK(p.grad()(0, 1) == 4.0);

  Tape t2;
  const Var q = t2.variable(row({1, 2}));
  const Var other = t2.variable(row({3}));
  t2.backward(sum(mul(other, other)));
  CHECK(q.grad().isZero());
}

TEST_CASE("backward: contract errors") {
  Tape t;
  const Var p = t.variable(row({1, 2}));
  CHECK_THROWS_AS(t.backward(p), ContractError);
  const Var c = t.constant(row({1}));
  CHECK_THROWS_AS(t.backward(sum(c)), ContractError);
  CHECK_THROWS_AS(matmul(p, p), ContractError);
  CHECK_THROWS_AS(block_softmax(t.constant(Matrix(1, 0)), 1), ContractError);
}

TEST_CASE("every primitive matches central differences") {
  std::mt19937_64 rng(7);
  const Matrix a = testing::random_matrix(4, 6, rng);
  const Matrix b6 = testing::random_matrix(6, 3, rng);

  check_op("matmul", a, [&](const Var& x) { return project(matmul(x, x.tape()->constant(b6)), 1); });
  check_op("matmul_rhs", b6, [&](const Var& x) { return project(matmul(x.tape()->constant(a), x), 2); });
  check_op("transpose", a, [](const Var& x) { return project(transpose(x), 3); });
  check_op("add_sub_mul", a, [&](const Var& x) {
    const Var c = x.tape()->constant(a * 0.5);
    return project(mul(add(x, c), sub(x, c)), 4);
  });
  check_op("add_row", a, [&](const Var& x) { return project(add_row(x, x.tape()->constant(a.row(0))), 5); });
  check_op("add_row_bias", Matrix(a.row(1)), [&](const Var& r) { return project(add_row(r.tape()->constant(a), r), 6); });
  check_op("scalar_ops", a, [](const Var& x) { return project(scale(add_scalar(x, 0.3), -1.7), 7); });
  // Keep entries away from the kink.
  Matrix away = a;
  for (Eigen::Index i = 0; i < away.size(); ++i) away(i) += (away(i) >= 0 ? 0.05 : -0.05);
  check_op("relu", away, [](const Var& x) { return project(relu(x), 8); });
  check_op("hinge", away, [](const Var& x) { return project(hinge(x), 9); });
  check_op("log", Matrix(a.cwiseAbs().array() + 0.2), [](const Var& x) { return project(log(x, 1e-10), 10); });
  check_op("mean", a, [](const Var& x) { return mean(mul(x, x)); });
  check_op("euclidean_norm", a, [](const Var& x) { return euclidean_norm(x); });
  check_op("row_norm", a, [](const Var& x) { return project(row_norm(x), 11); });
  check_op("block_l2_normalize", a, [](const Var& x) { return project(block_l2_normalize(x, 3), 12); });
  check_op("block_softmax", a, [](const Var& x) { return project(block_softmax(x, 2), 13); });
  check_op("slice_concat", a, [](const Var& x) {
    const Var parts[] = {slice_cols(x, 4, 2), slice_cols(x, 0, 3)};
    return project(concat_cols(parts), 14);
  });
  check_op("gather_rows", a, [](const Var& x) {
    const Eigen::Index rows[] = {3, 0, 3, 1};
    return project(gather_rows(x, rows), 15);
  });
  check_op("nearest_neighbour_distance", a, [](const Var& x) { return project(nearest_neighbour_distance(x), 16); });
  const Matrix refs = testing::random_matrix(5, 6, rng);
  check_op("nearest_row_distance", a, [&](const Var& x) { return project(nearest_row_distance(x, x.tape()->constant(refs)), 17); });
  check_op("nearest_row_distance_refs", refs, [&](const Var& r) { return project(nearest_row_distance(r.tape()->constant(a), r), 18); });
}

TEST_CASE("batch norm: gradients for input, scale and shift") {
  std::mt19937_64 rng(9);
  const Matrix x = testing::random_matrix(8, 3, rng);
  const Matrix gamma = testing::random_matrix(1, 3, rng);
  const Matrix beta = testing::random_matrix(1, 3, rng);
  const Eigen::RowVectorXd rm = Eigen::RowVectorXd::Zero(3), rv = Eigen::RowVectorXd::Ones(3);
  check_op("bn_x", x, [&](const Var& v) {
    Tape* t = v.tape();
    return project(batch_norm(v, t->constant(gamma), t->constant(beta), rm, rv, Mode::train, 1e-5), 20);
  });
  check_op("bn_gamma", gamma, [&](const Var& g) {
    Tape* t = g.tape();
    return project(batch_norm(t->constant(x), g, t->constant(beta), rm, rv, Mode::train, 1e-5), 21);
  });
  check_op("bn_beta", beta, [&](const Var& b) {
    Tape* t = b.tape();
    return project(batch_norm(t->constant(x), t->constant(gamma), b, rm, rv, Mode::train, 1e-5), 22);
  });
}

TEST_CASE("batch norm: train statistics and eval mode") {
  std::mt19937_64 rng(3);
  Matrix x = testing::random_matrix(32, 5, rng, 4.0);
  x.rowwise() += Eigen::RowVectorXd::LinSpaced(5, -3, 3);
  Tape t;
  BatchMoments m;
  const Matrix ones = Matrix::Ones(1, 5), zeros = Matrix::Zero(1, 5);
  const Eigen::RowVectorXd rm = Eigen::RowVectorXd::Zero(5), rv = Eigen::RowVectorXd::Ones(5);
  const Matrix out = batch_norm(t.constant(x), t.constant(ones), t.constant(zeros), rm, rv, Mode::train, 1e-5, &m).value();
  const Eigen::RowVectorXd mu = out.colwise().mean();
  CHECK(mu.cwiseAbs().maxCoeff() < 1e-6);
  const Eigen::RowVectorXd var = (out.rowwise() - mu).array().square().colwise().mean();
  CHECK((var.array() - 1.0).abs().maxCoeff() < 1e-4);
  CHECK((m.mean - x.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);

  // Eval mode uses only the supplied statistics: one row normalizes the same alone or in a batch.
  Eigen::RowVectorXd em(5), ev(5);
  em << 1, 2, 3, 4, 5;
  ev << 1, 4, 9, 16, 25;
  const Matrix all = batch_norm(t.constant(x), t.constant(ones), t.constant(zeros), em, ev, Mode::eval, 1e-5).value();
  const Matrix one = batch_norm(t.constant(x.row(3)), t.constant(ones), t.constant(zeros), em, ev, Mode::eval, 1e-5).value();
  CHECK((all.row(3) - one).cwiseAbs().maxCoeff() == 0.0);
  CHECK(one(0, 1) == Approx((x(3, 1) - 2.0) / std::sqrt(4.0 + 1e-5)));
}

TEST_CASE("straight-through argmax: forward one-hot, backward identity") {
  Tape t;
  CHECK(straight_through_argmax(t.constant(row({0.1, 0.7, 0.2})), 3).value() == row({0, 1, 0}));
  CHECK(straight_through_argmax(t.constant(row({0.5, 0.5})), 2).value() == row({1, 0}));
  CHECK_THROWS_AS(straight_through_argmax(t.constant(Matrix(1, 0)), 1), ContractError);

  Tape t2;
  const Var z = t2.variable(row({0.1, 0.7, 0.2, 0.6, 0.3, 0.1}));
  const Var hard = straight_through_argmax(z, 3);
  const Var target = t2.constant(row({0.2, 0.1, 0.9, 0.0, 1.0, 0.0}));
  const Var diff = sub(hard, target);
  t2.backward(sum(mul(diff, diff)));
  CHECK(z.grad() == hard.grad());
  CHECK(!z.grad().isZero());
  CHECK(z.grad() == 2.0 * (hard.value() - target.value()));
}

TEST_CASE("tape replay is bit-identical") {
  std::mt19937_64 rng(5);
  const Matrix a = testing::random_matrix(6, 4, rng);
  auto run = [&] {
    Tape t;
    const Var v = t.variable(a);
    const Var l = sum(log(row_norm(block_softmax(matmul(v, transpose(v)), 3)), 1e-10));
    t.backward(l);
    return std::make_pair(l.scalar(), Matrix(v.grad()));
  };
  const auto x = run();
  const auto y = run();
  CHECK(x.first == y.first);
  CHECK(x.second == y.second);
}

TEST_CASE("adam: first step, zero gradients, determinism") {
  std::mt19937_64 rng(1);
  Matrix p = testing::random_matrix(3, 4, rng);
  const Matrix start = p;
  std::vector<Matrix*> params{&p};
  AdamState s = make_adam_state(std::vector<const Matrix*>{&p});

  const std::vector<Matrix> zero{Matrix::Zero(3, 4)};
  adam_step(s, params, zero);
  CHECK(p == start);
  CHECK(s.step == 1);

  // Constant gradient: the first bias-corrected step is g / (|g| + eps) * lr, about lr in size.
  AdamState fresh = make_adam_state(std::vector<const Matrix*>{&p});
  Matrix g = testing::random_matrix(3, 4, rng);
  g(1, 1) = 0.0;
  adam_step(fresh, params, std::vector<Matrix>{g});
  const double lr = fresh.config.learning_rate;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double step = std::abs(p(i) - start(i));
    if (g(i) == 0.0) {
      CHECK(step == 0.0);
      CHECK(fresh.m[0](i) == 0.0);
      CHECK(fresh.v[0](i) == 0.0);
    } else {
      CHECK(step <= lr * (1.0 + 1e-8));
      CHECK(step == Approx(lr * std::abs(g(i)) / (std::abs(g(i)) + fresh.config.epsilon)).epsilon(1e-9));
      CHECK((p(i) - start(i)) * g(i) < 0);
    }
  }

  auto run = [&] {
    Matrix q = start;
    std::vector<Matrix*> qp{&q};
    AdamState st = make_adam_state(std::vector<const Matrix*>{&q});
    for (int k = 0; k < 5; ++k) adam_step(st, qp, std::vector<Matrix>{g * (k + 1)});
    return q;
  };
  CHECK(run() == run());

  CHECK_THROWS_AS(adam_step(fresh, params, std::vector<Matrix>{Matrix::Zero(2, 2)}), ContractError);
}
