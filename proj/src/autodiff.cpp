#include "sphash/autodiff.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace sphash::ad {
namespace {

void same_tape(const Var& a, const Var& b) {
  require(a.valid() && b.valid() && a.tape() == b.tape(), "autodiff: operands belong to different tapes");
}

void same_shape(const Var& a, const Var& b, const char* op) {
  same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
              std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

void check_blocks(const Var& a, Eigen::Index block, const char* op) {
  require(block > 0, std::string(op) + ": empty block");
  require(a.cols() > 0 && a.cols() % block == 0, std::string(op) + ": column count is not a multiple of the block size");
}

Matrix scalar_matrix(double v) { return Matrix::Constant(1, 1, v); }

}  // namespace

const Matrix& Var::value() const {
  require(valid(), "Var: uninitialized");
  return tape_->value(id_);
}

const Matrix& Var::grad() const {
  require(valid(), "Var: uninitialized");
  return tape_->grad(id_);
}

double Var::scalar() const {
  const Matrix& v = value();
  require(v.rows() == 1 && v.cols() == 1, "Var::scalar: not a 1x1 value");
  return v(0, 0);
}

bool Var::requires_grad() const { return valid() && tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, {}, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    require(in.tape() == this, "Tape::record: input from another tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || requires_grad(in.id());
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Matrix& Tape::grad(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.has_grad) return n.grad;
  zero_cache_.push_back(Matrix::Zero(n.value.rows(), n.value.cols()));
  return zero_cache_.back();
}

void Tape::accumulate(const Var& target, const Matrix& delta) {
  Node& n = nodes_[static_cast<std::size_t>(target.id())];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = delta;
    n.has_grad = true;
  } else {
    n.grad += delta;
  }
}

void Tape::backward(const Var& loss) {
  require(loss.tape() == this, "backward: loss from another tape");
  const Matrix& lv = loss.value();
  require(lv.rows() == 1 && lv.cols() == 1, "backward: loss must be a scalar (1x1), got " +
                                                std::to_string(lv.rows()) + "x" + std::to_string(lv.cols()));
  require(requires_grad(loss.id()), "backward: loss is detached from every tracked variable");
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  zero_cache_.clear();
  Node& root = nodes_[static_cast<std::size_t>(loss.id())];
  root.grad = scalar_matrix(1.0);
  root.has_grad = true;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad || !n.backward) continue;
    // Copy: the callback may reallocate nothing, but keeps aliasing rules simple.
    const Matrix g = n.grad;
    n.backward(*this, g);
  }
}

Var matmul(const Var& a, const Var& b) {
  same_tape(a, b);
  require(a.cols() == b.rows(), "matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()) + ")");
  Tape& t = *a.tape();
  return t.record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g * b.value().transpose());
    t.accumulate(b, a.value().transpose() * g);
  });
}

Var transpose(const Var& a) {
  return a.tape()->record(a.value().transpose(), {a},
                          [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
}

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(b.value()));
    t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var add_row(const Var& a, const Var& row) {
  same_tape(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be 1x" + std::to_string(a.cols()));
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(row, g.colwise().sum());
  });
}

Var add_scalar(const Var& a, double c) {
  return a.tape()->record(a.value().array() + c, {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var scale(const Var& a, double c) {
  return a.tape()->record(a.value() * c, {a}, [a, c](Tape& t, const Matrix& g) { t.accumulate(a, g * c); });
}

Var relu(const Var& a) {
  return a.tape()->record(a.value().cwiseMax(0.0), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
  });
}

Var hinge(const Var& a) { return relu(a); }

Var log(const Var& a, double eps) {
  require(eps > 0.0, "log: guard must be positive");
  Matrix out = a.value().cwiseMax(eps).array().log();
  return a.tape()->record(std::move(out), {a}, [a, eps](Tape& t, const Matrix& g) {
    const Matrix& x = a.value();
    t.accumulate(a, (x.array() > eps).select(g.array() / x.array(), 0.0).matrix());
  });
}

Var sum(const Var& a) {
  return a.tape()->record(scalar_matrix(a.value().sum()), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(const Var& a) {
  require(a.value().size() > 0, "mean: empty input");
  const double n = static_cast<double>(a.value().size());
  return a.tape()->record(scalar_matrix(a.value().sum() / n), {a}, [a, n](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
  });
}

Var euclidean_norm(const Var& a) {
  const double n = a.value().norm();
  return a.tape()->record(scalar_matrix(n), {a}, [a, n](Tape& t, const Matrix& g) {
    if (n > 0.0) t.accumulate(a, a.value() * (g(0, 0) / n));
  });
}

Var row_norm(const Var& a) {
  Matrix out = a.value().rowwise().norm();
  return a.tape()->record(out, {a}, [a, out](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      if (out(i, 0) > 0.0) d.row(i) = a.value().row(i) * (g(i, 0) / out(i, 0));
    }
    t.accumulate(a, d);
  });
}

Var block_l2_normalize(const Var& a, Eigen::Index block, double eps) {
  check_blocks(a, block, "block_l2_normalize");
  const Matrix& x = a.value();
  const Eigen::Index nb = x.cols() / block;
  Matrix out(x.rows(), x.cols());
  Matrix denom(x.rows(), nb);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index m = 0; m < nb; ++m) {
      const double n = x.row(i).segment(m * block, block).norm();
      denom(i, m) = std::max(n, eps);
      out.row(i).segment(m * block, block) = x.row(i).segment(m * block, block) / denom(i, m);
    }
  }
  return a.tape()->record(out, {a}, [a, block, out, denom, eps](Tape& t, const Matrix& g) {
    Matrix d(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      for (Eigen::Index m = 0; m < denom.cols(); ++m) {
        auto gb = g.row(i).segment(m * block, block);
        auto ub = out.row(i).segment(m * block, block);
        if (denom(i, m) > eps) {
          // d(v/|v|) = (I - u u^T) / |v|
          d.row(i).segment(m * block, block) = (gb - ub * gb.dot(ub)) / denom(i, m);
        } else {
          d.row(i).segment(m * block, block) = gb / eps;
        }
      }
    }
    t.accumulate(a, d);
  });
}

Var block_softmax(const Var& a, Eigen::Index block) {
  check_blocks(a, block, "block_softmax");
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index m = 0; m * block < x.cols(); ++m) {
      auto xb = x.row(i).segment(m * block, block);
      Eigen::RowVectorXd e = (xb.array() - xb.maxCoeff()).exp();
      out.row(i).segment(m * block, block) = e / e.sum();
    }
  }
  return a.tape()->record(out, {a}, [a, block, out](Tape& t, const Matrix& g) {
    Matrix d(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      for (Eigen::Index m = 0; m * block < g.cols(); ++m) {
        auto sb = out.row(i).segment(m * block, block);
        auto gb = g.row(i).segment(m * block, block);
        d.row(i).segment(m * block, block) = sb.cwiseProduct((gb.array() - gb.dot(sb)).matrix());
      }
    }
    t.accumulate(a, d);
  });
}

Var straight_through_argmax(const Var& a, Eigen::Index block) {
  check_blocks(a, block, "straight_through_argmax");
  const Matrix& x = a.value();
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index m = 0; m * block < x.cols(); ++m) {
      // First maximal entry wins ties. NaN entries never win; an all-NaN block picks index 0
      // so the non-finite value surfaces in the loss check instead of here.
      Eigen::Index best = 0;
      double top = -std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < block; ++k) {
        const double v = x(i, m * block + k);
        if (v > top) {
          top = v;
          best = k;
        }
      }
      out(i, m * block + best) = 1.0;
    }
  }
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: range out of bounds");
  const Eigen::Index cols = a.cols();
  return a.tape()->record(a.value().middleCols(start, count), {a}, [a, start, count, cols](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(g.rows(), cols);
    d.middleCols(start, count) = g;
    t.accumulate(a, d);
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: nothing to concatenate");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    require(p.rows() == rows, "concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Var> inputs(parts.begin(), parts.end());
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape()->record(std::move(out), inputs, [inputs](Tape& t, const Matrix& g) {
    Eigen::Index at = 0;
    for (const Var& p : inputs) {
      t.accumulate(p, g.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

Var gather_rows(const Var& a, std::span<const Eigen::Index> rows) {
  std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  Matrix out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < a.rows(), "gather_rows: row index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  return a.tape()->record(std::move(out), {a}, [a, idx](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(a, d);
  });
}

Var detach(const Var& a) { return a.tape()->constant(a.value()); }

Var nearest_neighbour_distance(const Var& a) {
  const Matrix& x = a.value();
  const Eigen::Index n = x.rows();
  require(n >= 2, "nearest_neighbour_distance: need at least 2 rows");
  Matrix out(n, 1);
  std::vector<Eigen::Index> nn(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = (x.row(i) - x.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        nn[static_cast<std::size_t>(i)] = j;
      }
    }
    out(i, 0) = std::sqrt(best);
  }
  return a.tape()->record(out, {a}, [a, nn, out](Tape& t, const Matrix& g) {
    const Matrix& x = a.value();
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (out(i, 0) <= 0.0) continue;
      const Eigen::Index j = nn[static_cast<std::size_t>(i)];
      const Eigen::RowVectorXd u = (x.row(i) - x.row(j)) * (g(i, 0) / out(i, 0));
      d.row(i) += u;
      d.row(j) -= u;
    }
    t.accumulate(a, d);
  });
}

Var nearest_row_distance(const Var& a, const Var& refs, std::vector<Eigen::Index>* chosen) {
  same_tape(a, refs);
  require(a.cols() == refs.cols(), "nearest_row_distance: column count mismatch");
  require(refs.rows() >= 1, "nearest_row_distance: no reference rows");
  const Matrix& x = a.value();
  const Matrix& r = refs.value();
  Matrix out(x.rows(), 1);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < r.rows(); ++j) {
      const double d = (x.row(i) - r.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        idx[static_cast<std::size_t>(i)] = j;
      }
    }
    out(i, 0) = std::sqrt(best);
  }
  if (chosen != nullptr) *chosen = idx;
  return a.tape()->record(out, {a, refs}, [a, refs, idx, out](Tape& t, const Matrix& g) {
    const Matrix& x = a.value();
    const Matrix& r = refs.value();
    Matrix dx = Matrix::Zero(x.rows(), x.cols());
    Matrix dr = Matrix::Zero(r.rows(), r.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (out(i, 0) <= 0.0) continue;
      const Eigen::Index j = idx[static_cast<std::size_t>(i)];
      const Eigen::RowVectorXd u = (x.row(i) - r.row(j)) * (g(i, 0) / out(i, 0));
      dx.row(i) += u;
      dr.row(j) -= u;
    }
    t.accumulate(a, dx);
    t.accumulate(refs, dr);
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, const Eigen::RowVectorXd& running_mean,
               const Eigen::RowVectorXd& running_var, Mode mode, double eps, BatchMoments* moments) {
  same_tape(x, gamma);
  same_tape(x, beta);
  const Eigen::Index c = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == c && beta.rows() == 1 && beta.cols() == c,
          "batch_norm: gamma/beta must be 1x" + std::to_string(c));
  require(x.rows() > 0, "batch_norm: empty batch");
  const Matrix& v = x.value();
  const auto n = static_cast<double>(v.rows());

  Eigen::RowVectorXd mu, var;
  if (mode == Mode::train) {
    mu = v.colwise().mean();
    var = (v.rowwise() - mu).array().square().colwise().sum() / n;
    if (moments != nullptr) *moments = BatchMoments{mu, var};
  } else {
    require(running_mean.size() == c && running_var.size() == c, "batch_norm: running statistics have wrong size");
    mu = running_mean;
    var = running_var;
  }
  const Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt();
  const Matrix xhat = ((v.rowwise() - mu).array().rowwise() * inv_std.array()).matrix();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();

  return x.tape()->record(std::move(out), {x, gamma, beta},
                          [x, gamma, beta, xhat, inv_std, n, mode](Tape& t, const Matrix& g) {
                            t.accumulate(beta, g.colwise().sum());
                            t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                            const Matrix dxhat = (g.array().rowwise() * gamma.value().row(0).array()).matrix();
                            if (mode == Mode::eval) {
                              t.accumulate(x, (dxhat.array().rowwise() * inv_std.array()).matrix());
                              return;
                            }
                            const Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
                            const Eigen::RowVectorXd sum_dx = dxhat.cwiseProduct(xhat).colwise().sum();
                            Matrix dx = (n * dxhat).rowwise() - sum_d;
                            dx -= (xhat.array().rowwise() * sum_dx.array()).matrix();
                            dx = (dx.array().rowwise() * (inv_std.array() / n)).matrix();
                            t.accumulate(x, dx);
                          });
}

}  // namespace sphash::ad
