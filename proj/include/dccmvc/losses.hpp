#pragma once

// Objective terms of the dual-consistency model. Every term is a batch-mean,
// differentiable scalar recorded on the caller's tape, signed so that training
// minimizes it.

#include "dccmvc/model.hpp"

#include <random>
#include <span>
#include <vector>

namespace dccmvc {

struct LossWeights {
  double alpha = 1.0;           // autoencoder reconstruction
  double beta = 0.01;           // cross + within + shared-inference
  double gamma = 0.01;          // contrastive
  double epsilon = 1.0;         // within-view reconstruction balance
  double omega = 1.0;           // cross-view reconstruction balance
  double eta = 0.0;             // marginal exponent in the MI term
  double entropy_weight = 1.0;  // entropy bonus in the contrastive term

  void validate() const;
};

struct LossReport {
  double rec = 0.0;
  double within = 0.0;
  double cross = 0.0;
  double shared_inference = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
};

// All stochastic inputs of one training step.
struct NoiseBundle {
  std::vector<Matrix> private_noise;   // per view, n x d_p, standard normal
  std::vector<Matrix> shared_uniform;  // per view, n x K, in (0, 1)
  Matrix fused_uniform;                // n x K, in (0, 1)
  std::vector<Matrix> prior_private;   // per view, n x d_p, standard normal

  static NoiseBundle draw(std::mt19937_64& rng, Eigen::Index n, std::size_t views,
                          Eigen::Index private_dim, Eigen::Index clusters);
};

// Posteriors and reparameterized codes for one batch.
struct LatentState {
  std::vector<ViewPosteriors> posteriors;
  std::vector<Var> z_private;  // per-view Gaussian draws
  std::vector<Var> z_shared;   // per-view Gumbel-Softmax draws
  CategoricalPosterior fused;  // product of the per-view shared posteriors
  Var z_fused;                 // Gumbel-Softmax draw from the fused posterior
  std::vector<Matrix> prior_private;
};

LatentState infer_latents(DccmvcModel& model, Tape& tape, std::span<const Var> views,
                          const NoiseBundle& noise);

// Batch mean of the squared Euclidean distance between rows.
Var squared_error(Var target, Var reconstruction);

// Sum over views of ||X_v - decode_v(z_private_v, z_shared_v)||^2.
Var loss_rec(DccmvcModel& model, Tape& tape, std::span<const Var> views,
             std::span<const Var> z_private, std::span<const Var> z_shared);

// Plain autoencoder codes: posterior means and per-view shared probabilities.
void autoencoder_codes(const std::vector<ViewPosteriors>& posteriors, std::vector<Var>& z_private,
                       std::vector<Var>& z_shared);

Var loss_within(DccmvcModel& model, Tape& tape, std::span<const Var> views, const LatentState& state,
                double epsilon);
Var loss_cross(DccmvcModel& model, Tape& tape, std::span<const Var> views, const LatentState& state,
               double omega);
Var loss_shared_inference(DccmvcModel& model, Tape& tape, std::span<const Var> views,
                          const LatentState& state);

// Negated regularized mutual information plus entropy bonus between two
// row-stochastic cluster-probability matrices.
Var loss_contrastive(Var q1, Var q2, double eta, double entropy_weight);
// Mean of loss_contrastive over unordered view pairs; 0 for a single view.
Var loss_contrastive_views(Tape& tape, std::span<const Var> q, double eta, double entropy_weight);

struct LossTerms {
  Var total;
  LossReport report;
};

LossTerms loss_total(DccmvcModel& model, Tape& tape, std::span<const Var> views,
                     const LossWeights& weights, const NoiseBundle& noise);

// Stage-1 objective: alpha * loss_rec with plain autoencoder codes.
LossTerms loss_pretrain(DccmvcModel& model, Tape& tape, std::span<const Var> views,
                        const LossWeights& weights);

}  // namespace dccmvc
