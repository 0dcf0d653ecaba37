#include "dccmvc/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dccmvc {

namespace {

Matrix standard_normal(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = normal(rng);
  return m;
}

Matrix open_uniform(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  // generate_canonical lies in [0, 1); reject the endpoint so -log(-log u) is finite.
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    double u = 0.0;
    do {
      u = std::generate_canonical<double, 53>(rng);
    } while (u <= 0.0 || u >= 1.0);
    m.data()[k] = u;
  }
  return m;
}

void check_row_stochastic(const Matrix& q, const char* name) {
  for (Eigen::Index r = 0; r < q.rows(); ++r) {
    const double s = q.row(r).sum();
    if (std::abs(s - 1.0) > 1e-6 || q.row(r).minCoeff() < -1e-12) {
      throw std::invalid_argument(std::string("loss_contrastive: row ") + std::to_string(r) + " of " +
                                  name + " is not on the probability simplex (sum " +
                                  std::to_string(s) + ")");
    }
  }
}

Var entropy_of_mean_row(Var q) {
  Var m = scalar_mul(col_sums(q), 1.0 / static_cast<double>(q.rows()));
  return scalar_mul(sum(hadamard(m, clamped_log(m))), -1.0);
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {alpha, beta, gamma, epsilon, omega, eta, entropy_weight}) {
    if (!std::isfinite(w)) throw std::invalid_argument("loss weights must be finite");
  }
  if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) {
    throw std::invalid_argument("loss weights alpha, beta, gamma must be non-negative");
  }
}

NoiseBundle NoiseBundle::draw(std::mt19937_64& rng, Eigen::Index n, std::size_t views,
                              Eigen::Index private_dim, Eigen::Index clusters) {
  NoiseBundle b;
  for (std::size_t v = 0; v < views; ++v) {
    b.private_noise.push_back(standard_normal(rng, n, private_dim));
    b.shared_uniform.push_back(open_uniform(rng, n, clusters));
    b.prior_private.push_back(standard_normal(rng, n, private_dim));
  }
  b.fused_uniform = open_uniform(rng, n, clusters);
  return b;
}

LatentState infer_latents(DccmvcModel& model, Tape& tape, std::span<const Var> views,
                          const NoiseBundle& noise) {
  if (views.size() != model.num_views()) {
    throw std::invalid_argument("batch has " + std::to_string(views.size()) + " views, model has " +
                                std::to_string(model.num_views()));
  }
  LatentState s;
  std::vector<CategoricalPosterior> shared;
  for (std::size_t v = 0; v < views.size(); ++v) {
    s.posteriors.push_back(encode(model, tape, v, views[v]));
    s.z_private.push_back(gaussian_sample(s.posteriors[v].priv, noise.private_noise.at(v)));
    s.z_shared.push_back(gumbel_softmax_sample(s.posteriors[v].shared, noise.shared_uniform.at(v)));
    shared.push_back(s.posteriors[v].shared);
  }
  s.fused = fuse_shared(shared);
  s.z_fused = gumbel_softmax_sample(s.fused, noise.fused_uniform);
  s.prior_private = noise.prior_private;
  return s;
}

Var squared_error(Var target, Var reconstruction) {
  return scalar_mul(sum(square(sub(target, reconstruction))),
                    1.0 / static_cast<double>(target.rows()));
}

Var loss_rec(DccmvcModel& model, Tape& tape, std::span<const Var> views,
             std::span<const Var> z_private, std::span<const Var> z_shared) {
  Var total;
  for (std::size_t v = 0; v < views.size(); ++v) {
    Var term = squared_error(views[v], decode(model, tape, v, z_private[v], z_shared[v]));
    total = total.valid() ? add(total, term) : term;
  }
  return total;
}

void autoencoder_codes(const std::vector<ViewPosteriors>& posteriors, std::vector<Var>& z_private,
                       std::vector<Var>& z_shared) {
  z_private.clear();
  z_shared.clear();
  for (const ViewPosteriors& p : posteriors) {
    z_private.push_back(p.priv.mu);
    z_shared.push_back(row_softmax(p.shared.logits));
  }
}

Var loss_within(DccmvcModel& model, Tape& tape, std::span<const Var> views, const LatentState& state,
                double epsilon) {
  Var total;
  for (std::size_t v = 0; v < views.size(); ++v) {
    Var nll = squared_error(views[v], decode(model, tape, v, state.z_private[v], state.z_shared[v]));
    Var term = add(add(scalar_mul(nll, epsilon), kl_gaussian_standard(state.posteriors[v].priv)),
                   kl_categorical_uniform(state.posteriors[v].shared));
    total = total.valid() ? add(total, term) : term;
  }
  return total;
}

Var loss_cross(DccmvcModel& model, Tape& tape, std::span<const Var> views, const LatentState& state,
               double omega) {
  // sum_i sum_j [omega * nll_i + KL_private_i + KL_shared_j]
  //   = V * sum_i (omega * nll_i + KL_private_i) + V * sum_j KL_shared_j
  const double num_views = static_cast<double>(views.size());
  Var total;
  for (std::size_t v = 0; v < views.size(); ++v) {
    Var nll = squared_error(views[v], decode(model, tape, v, state.z_private[v], state.z_fused));
    Var term = add(add(scalar_mul(nll, omega), kl_gaussian_standard(state.posteriors[v].priv)),
                   kl_categorical_uniform(state.posteriors[v].shared));
    total = total.valid() ? add(total, term) : term;
  }
  return scalar_mul(total, num_views);
}

Var loss_shared_inference(DccmvcModel& model, Tape& tape, std::span<const Var> views,
                          const LatentState& state) {
  Var total = tape.constant(Matrix::Zero(1, 1));
  for (std::size_t i = 0; i < views.size(); ++i) {
    for (std::size_t j = 0; j < views.size(); ++j) {
      if (i == j) continue;
      Var prior_code = tape.constant(state.prior_private.at(j));
      Var recon = decode(model, tape, j, prior_code, state.z_shared[i]);
      total = add(total, squared_error(views[j], recon));
    }
  }
  return total;
}

Var loss_contrastive(Var q1, Var q2, double eta, double entropy_weight) {
  if (q1.rows() != q2.rows() || q1.cols() != q2.cols()) {
    throw std::invalid_argument("loss_contrastive: shapes " + shape_str(q1.value()) + " and " +
                                shape_str(q2.value()) + " differ");
  }
  check_row_stochastic(q1.value(), "q1");
  check_row_stochastic(q2.value(), "q2");
  Tape& tape = q1.tape();
  const Eigen::Index k = q1.cols();
  const double n = static_cast<double>(q1.rows());

  Var joint = scalar_mul(matmul(transpose(q1), q2), 1.0 / n);
  joint = scalar_mul(add(joint, transpose(joint)), 0.5);
  Var row_marginal = row_sums(joint);  // K x 1
  Var col_marginal = col_sums(joint);  // 1 x K
  Var ones_row = tape.constant(Matrix::Ones(1, k));
  Var ones_col = tape.constant(Matrix::Ones(k, 1));
  Var log_marginals = add(matmul(clamped_log(row_marginal), ones_row),
                          matmul(ones_col, clamped_log(col_marginal)));
  Var pointwise = sub(clamped_log(joint), scalar_mul(log_marginals, eta + 1.0));
  Var mutual_info = sum(hadamard(joint, pointwise));

  Var entropies = add(entropy_of_mean_row(q1), entropy_of_mean_row(q2));
  return scalar_mul(add(mutual_info, scalar_mul(entropies, entropy_weight)), -1.0);
}

Var loss_contrastive_views(Tape& tape, std::span<const Var> q, double eta, double entropy_weight) {
  Var total = tape.constant(Matrix::Zero(1, 1));
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t j = i + 1; j < q.size(); ++j) {
      total = add(total, loss_contrastive(q[i], q[j], eta, entropy_weight));
      ++pairs;
    }
  }
  return pairs > 1 ? scalar_mul(total, 1.0 / static_cast<double>(pairs)) : total;
}

LossTerms loss_total(DccmvcModel& model, Tape& tape, std::span<const Var> views,
                     const LossWeights& weights, const NoiseBundle& noise) {
  weights.validate();
  LatentState state = infer_latents(model, tape, views, noise);

  std::vector<Var> ae_private, ae_shared;
  autoencoder_codes(state.posteriors, ae_private, ae_shared);
  Var rec = loss_rec(model, tape, views, ae_private, ae_shared);
  Var within = loss_within(model, tape, views, state, weights.epsilon);
  Var cross = loss_cross(model, tape, views, state, weights.omega);
  Var inference = loss_shared_inference(model, tape, views, state);
  std::vector<Var> q;
  for (const ViewPosteriors& p : state.posteriors) q.push_back(row_softmax(p.shared.logits));
  Var contrastive = loss_contrastive_views(tape, q, weights.eta, weights.entropy_weight);

  Var consistency = add(add(cross, within), inference);
  Var total = add(add(scalar_mul(rec, weights.alpha), scalar_mul(consistency, weights.beta)),
                  scalar_mul(contrastive, weights.gamma));

  LossReport report;
  report.rec = rec.scalar();
  report.within = within.scalar();
  report.cross = cross.scalar();
  report.shared_inference = inference.scalar();
  report.contrastive = contrastive.scalar();
  report.total = total.scalar();
  return {total, report};
}

LossTerms loss_pretrain(DccmvcModel& model, Tape& tape, std::span<const Var> views,
                        const LossWeights& weights) {
  std::vector<ViewPosteriors> posteriors;
  for (std::size_t v = 0; v < views.size(); ++v) posteriors.push_back(encode(model, tape, v, views[v]));
  std::vector<Var> ae_private, ae_shared;
  autoencoder_codes(posteriors, ae_private, ae_shared);
  Var rec = loss_rec(model, tape, views, ae_private, ae_shared);
  Var total = scalar_mul(rec, weights.alpha);
  LossReport report;
  report.rec = rec.scalar();
  report.total = total.scalar();
  return {total, report};
}

}  // namespace dccmvc
