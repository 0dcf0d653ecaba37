#pragma once

// Test-only helpers: random inputs, a central finite-difference gradient
// oracle, and a toy model small enough to differentiate numerically.

#include "dccmvc/losses.hpp"
#include "dccmvc/model.hpp"
#include "dccmvc/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace dccmvc::testing {

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
  return m;
}

inline Matrix random_stochastic(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m = random_matrix(rng, rows, cols, 0.05, 1.0);
  for (Eigen::Index r = 0; r < rows; ++r) m.row(r) /= m.row(r).sum();
  return m;
}

using LossBuilder = std::function<Var(Tape&)>;

// Worst per-tensor relative error ||analytic - numeric|| / max(||analytic|| + ||numeric||, floor)
// over all tensors, using central differences with step h.
inline double gradient_error(std::vector<Tensor*> tensors, const LossBuilder& build, double h = 1e-5,
                             double floor = 1e-8) {
  for (Tensor* t : tensors) {
    t->set_requires_grad(true);
    t->zero_grad();
  }
  {
    Tape tape;
    Var loss = build(tape);
    tape.backward(loss);
  }
  double worst = 0.0;
  for (Tensor* t : tensors) {
    Matrix analytic = t->grad() ? *t->grad() : Matrix::Zero(t->rows(), t->cols());
    Matrix numeric(t->rows(), t->cols());
    for (Eigen::Index k = 0; k < t->value().size(); ++k) {
      double& x = t->mutable_value().data()[k];
      const double saved = x;
      x = saved + h;
      double up;
      {
        Tape tape;
        up = build(tape).scalar();
      }
      x = saved - h;
      double down;
      {
        Tape tape;
        down = build(tape).scalar();
      }
      x = saved;
      numeric.data()[k] = (up - down) / (2.0 * h);
    }
    const double denom = std::max(analytic.norm() + numeric.norm(), floor);
    worst = std::max(worst, (analytic - numeric).norm() / denom);
  }
  return worst;
}

inline ModelConfig toy_config(Eigen::Index clusters = 3, Eigen::Index private_dim = 4) {
  ModelConfig c;
  c.hidden = {6, 5};
  c.private_dim = private_dim;
  c.clusters = clusters;
  c.tau = 0.5;
  c.output = OutputActivation::kSigmoid;
  return c;
}

// 4-sample, 2-view toy problem: the acceptance-suite gradient setting.
struct ToyProblem {
  DccmvcModel model;
  std::vector<Matrix> views;
  NoiseBundle noise;

  explicit ToyProblem(std::uint64_t seed, Eigen::Index n = 4, std::vector<Eigen::Index> dims = {5, 4},
                      ModelConfig config = toy_config()) {
    std::mt19937_64 rng(seed);
    model = DccmvcModel(dims, config);
    model.init_parameters(seed);
    // Non-zero biases so every parameter path is exercised away from symmetric points.
    for (ParameterRef& p : model.parameters()) {
      if (p.name.ends_with(".bias")) p.tensor->mutable_value() = random_matrix(rng, 1, p.tensor->cols(), -0.2, 0.2);
    }
    for (Eigen::Index d : dims) views.push_back(random_matrix(rng, n, d, 0.0, 1.0));
    noise = NoiseBundle::draw(rng, n, dims.size(), config.private_dim, config.clusters);
  }

  std::vector<Var> view_vars(Tape& tape) const {
    std::vector<Var> vs;
    for (const Matrix& v : views) vs.push_back(tape.constant(v));
    return vs;
  }

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (ParameterRef& p : model.parameters()) out.push_back(p.tensor);
    return out;
  }
};

}  // namespace dccmvc::testing
