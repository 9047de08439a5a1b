#include "sphash/adam.hpp"

#include <cmath>
#include <string>

namespace sphash {

AdamState make_adam_state(std::span<const Matrix* const> params, const AdamConfig& config) {
  AdamState s;
  s.config = config;
  for (const Matrix* p : params) {
    s.m.push_back(Matrix::Zero(p->rows(), p->cols()));
    s.v.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
  return s;
}

void adam_step(AdamState& state, std::span<Matrix* const> params, std::span<const Matrix> grads) {
  require(params.size() == grads.size() && params.size() == state.m.size(),
          "adam_step: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) + " grads, " +
              std::to_string(state.m.size()) + " moment slots");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i]->rows() == grads[i].rows() && params[i]->cols() == grads[i].cols() &&
                state.m[i].rows() == grads[i].rows() && state.m[i].cols() == grads[i].cols(),
            "adam_step: shape mismatch for parameter " + std::to_string(i));
  }

  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    const Matrix& g = grads[i];
    for (Eigen::Index j = 0; j < p.size(); ++j) {
      const double gj = g(j);
      if (gj == 0.0) continue;
      m(j) = c.beta1 * m(j) + (1.0 - c.beta1) * gj;
      v(j) = c.beta2 * v(j) + (1.0 - c.beta2) * gj * gj;
      const double mhat = m(j) / correction1;
      const double vhat = v(j) / correction2;
      p(j) -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

}  // namespace sphash
