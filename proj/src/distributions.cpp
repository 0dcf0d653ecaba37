#include "dccmvc/distributions.hpp"

#include <cmath>
#include <stdexcept>

namespace dccmvc {

Var gaussian_sample(const GaussianPosterior& post, const Matrix& noise) {
  const Matrix& mu = post.mu.value();
  if (post.log_var.rows() != mu.rows() || post.log_var.cols() != mu.cols()) {
    throw std::invalid_argument("gaussian_sample: mu " + shape_str(mu) + " vs log_var " +
                                shape_str(post.log_var.value()));
  }
  if (noise.rows() != mu.rows() || noise.cols() != mu.cols()) {
    throw std::invalid_argument("gaussian_sample: noise " + shape_str(noise) + " vs mu " +
                                shape_str(mu));
  }
  Tape& tape = post.mu.tape();
  Var scale = exp(scalar_mul(post.log_var, 0.5));
  return add(post.mu, hadamard(scale, tape.constant(noise)));
}

Matrix gumbel_noise(const Matrix& uniform) {
  Matrix g(uniform.rows(), uniform.cols());
  for (Eigen::Index k = 0; k < uniform.size(); ++k) {
    const double u = uniform.data()[k];
    if (!(u > 0.0 && u < 1.0)) {
      throw std::domain_error("gumbel noise: uniform draw " + std::to_string(u) +
                              " outside the open interval (0, 1)");
    }
    g.data()[k] = -std::log(-std::log(u));
  }
  return g;
}

Var gumbel_softmax_sample(const CategoricalPosterior& post, const Matrix& uniform) {
  if (!(post.tau > 0.0)) throw std::invalid_argument("gumbel_softmax_sample: tau must be > 0");
  const Matrix& logits = post.logits.value();
  if (uniform.rows() != logits.rows() || uniform.cols() != logits.cols()) {
    throw std::invalid_argument("gumbel_softmax_sample: noise " + shape_str(uniform) +
                                " vs logits " + shape_str(logits));
  }
  Tape& tape = post.logits.tape();
  Var perturbed = add(post.logits, tape.constant(gumbel_noise(uniform)));
  return row_softmax(scalar_mul(perturbed, 1.0 / post.tau));
}

Var kl_gaussian_standard(const GaussianPosterior& post) {
  // -1/2 * sum(1 + log_var - mu^2 - exp(log_var)), averaged over rows
  const double n = static_cast<double>(post.mu.rows());
  Var inner = sub(sub(add_scalar(post.log_var, 1.0), square(post.mu)), exp(post.log_var));
  return scalar_mul(sum(inner), -0.5 / n);
}

Var kl_categorical_uniform(const CategoricalPosterior& post) {
  const double n = static_cast<double>(post.logits.rows());
  const double log_k = std::log(static_cast<double>(post.logits.cols()));
  Var p = row_softmax(post.logits);
  Var terms = hadamard(p, add_scalar(clamped_log(p), log_k));
  return scalar_mul(sum(terms), 1.0 / n);
}

}  // namespace dccmvc
