#pragma once

// Reparameterized samplers and closed-form KL terms for the two latent codes:
// a diagonal Gaussian private code with N(0, I) prior and a relaxed-categorical
// (Gumbel-Softmax) shared code with a uniform prior over K categories.
//
// Noise is always passed in explicitly so every draw is reproducible.

#include "dccmvc/numerics.hpp"

namespace dccmvc {

struct GaussianPosterior {
  Var mu;       // batch x d_p
  Var log_var;  // batch x d_p
};

struct CategoricalPosterior {
  Var logits;  // batch x K
  double tau = 0.5;
};

// mu + exp(log_var / 2) * noise
Var gaussian_sample(const GaussianPosterior& post, const Matrix& noise);

// Converts uniform draws in (0, 1) into standard Gumbel noise -log(-log u).
Matrix gumbel_noise(const Matrix& uniform);

// row_softmax((logits + g) / tau) with g = -log(-log u).
Var gumbel_softmax_sample(const CategoricalPosterior& post, const Matrix& uniform);

// Batch mean of KL(N(mu, exp(log_var)) || N(0, I)).
Var kl_gaussian_standard(const GaussianPosterior& post);

// Batch mean of KL(softmax(logits) || Uniform(K)).
Var kl_categorical_uniform(const CategoricalPosterior& post);

}  // namespace dccmvc
