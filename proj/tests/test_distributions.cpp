#include "support.hpp"

#include "dccmvc/distributions.hpp"

#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <functional>

using namespace dccmvc;
using dccmvc::testing::gradient_error;
using dccmvc::testing::random_matrix;

namespace {

Matrix uniform_draws(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::uniform_real_distribution<double> u(1e-12, 1.0 - 1e-12);
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
  return m;
}

// Direct sum_k p_k log(p_k / (1/K)), batch-averaged.
double categorical_kl_oracle(const Matrix& logits) {
  double total = 0.0;
  const double k = static_cast<double>(logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double z = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) z += std::exp(logits(r, c));
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const double p = std::exp(logits(r, c)) / z;
      total += p * std::log(p * k);
    }
  }
  return total / static_cast<double>(logits.rows());
}

}  // namespace

TEST_CASE("gaussian_sample") {
  Tape tape;
  auto sample = [&](double mu, double lv, double eps) {
    GaussianPosterior post{tape.constant(Matrix::Constant(1, 1, mu)), tape.constant(Matrix::Constant(1, 1, lv))};
    return gaussian_sample(post, Matrix::Constant(1, 1, eps)).scalar();
  };
  CHECK(sample(2.0, 0.0, 0.0) == 2.0);
  CHECK(sample(0.0, 0.0, 1.5) == 1.5);
  CHECK(sample(-0.3, 1.7, 0.0) == -0.3);

  GaussianPosterior post{tape.constant(Matrix::Zero(2, 2)), tape.constant(Matrix::Zero(2, 2))};
  CHECK_THROWS_AS(gaussian_sample(post, Matrix::Zero(2, 3)), std::invalid_argument);
}

TEST_CASE("gaussian_sample moments match the posterior") {
  const int n = 100000;
  const double mu = 0.7, log_var = -0.4, var = std::exp(log_var);
  std::mt19937_64 rng(21);
  std::normal_distribution<double> normal;
  Matrix noise(n, 1);
  for (int i = 0; i < n; ++i) noise(i, 0) = normal(rng);
  Tape tape;
  GaussianPosterior post{tape.constant(Matrix::Constant(n, 1, mu)), tape.constant(Matrix::Constant(n, 1, log_var))};
  Matrix z = gaussian_sample(post, noise).value();
  const double mean = z.mean();
  const double sample_var = (z.array() - mean).square().sum() / (n - 1);
  CHECK(std::abs(mean - mu) < 4.0 * std::sqrt(var / n));
  CHECK(std::abs(sample_var - var) < 4.0 * var * std::sqrt(2.0 / (n - 1)));
}

TEST_CASE("gumbel_softmax_sample temperature limits") {
  std::mt19937_64 rng(4);
  const int n = 200;
  Tape tape;
  SUBCASE("high temperature flattens uniform logits") {
    // Row spread is about (max g - min g) / (K tau), so the 1e-3 bound needs
    // Gumbel draws of bounded range; u in [0.1, 0.9] keeps g within [-0.84, 2.26].
    Matrix central = uniform_draws(rng, n, 4).array() * 0.8 + 0.1;
    CategoricalPosterior post{tape.constant(Matrix::Zero(n, 4)), 1e3};
    Matrix y = gumbel_softmax_sample(post, central).value();
    for (Eigen::Index r = 0; r < n; ++r) CHECK(y.row(r).maxCoeff() - y.row(r).minCoeff() < 1e-3);
    // Unrestricted draws still converge as tau grows.
    Matrix u = uniform_draws(rng, n, 4);
    auto spread = [&](double tau) {
      Matrix s = gumbel_softmax_sample({tape.constant(Matrix::Zero(n, 4)), tau}, u).value();
      return (s.rowwise().maxCoeff() - s.rowwise().minCoeff()).maxCoeff();
    };
    CHECK(spread(1e3) < spread(1e2));
    CHECK(spread(1e5) < 1e-3);
  }
  SUBCASE("low temperature is nearly one-hot") {
    Matrix logits = random_matrix(rng, n, 4);
    Matrix u = uniform_draws(rng, n, 4);
    Matrix perturbed = logits + gumbel_noise(u);
    Matrix y = gumbel_softmax_sample({tape.constant(logits), 1e-3}, u).value();
    // A near-tie between the top two perturbed logits keeps the row soft; any
    // gap above tau * log(999 (K - 1)) forces the top share over 0.999.
    const double needed_gap = 1e-3 * std::log(999.0 * 3.0);
    int resolved = 0;
    for (Eigen::Index r = 0; r < n; ++r) {
      std::vector<double> row(perturbed.row(r).begin(), perturbed.row(r).end());
      std::sort(row.begin(), row.end(), std::greater<>());
      if (row[0] - row[1] > needed_gap) {
        ++resolved;
        CHECK(y.row(r).maxCoeff() > 0.999);
      }
    }
    CHECK(resolved > n * 9 / 10);
    Matrix colder = gumbel_softmax_sample({tape.constant(logits), 1e-7}, u).value();
    for (Eigen::Index r = 0; r < n; ++r) CHECK(colder.row(r).maxCoeff() > 0.999);
  }
  SUBCASE("rows lie on the simplex") {
    CategoricalPosterior post{tape.constant(random_matrix(rng, n, 5, -3, 3)), 0.5};
    Matrix y = gumbel_softmax_sample(post, uniform_draws(rng, n, 5)).value();
    CHECK(y.minCoeff() >= 0.0);
    for (Eigen::Index r = 0; r < n; ++r) CHECK(std::abs(y.row(r).sum() - 1.0) < 1e-9);
  }
  SUBCASE("uniform draws outside (0, 1) are rejected") {
    CategoricalPosterior post{tape.constant(Matrix::Zero(1, 2)), 1.0};
    Matrix u(1, 2);
    u << 0.5, 1.0;
    CHECK_THROWS_AS(gumbel_softmax_sample(post, u), std::domain_error);
    u << 0.0, 0.5;
    CHECK_THROWS_AS(gumbel_softmax_sample(post, u), std::domain_error);
  }
}

TEST_CASE("gumbel argmax frequencies follow softmax(logits)") {
  const int n = 100000;
  Matrix logits(1, 4);
  logits << 0.5, -1.0, 1.2, 0.0;
  Matrix p = logits.array().exp();
  p /= p.sum();
  std::mt19937_64 rng(17);
  Tape tape;
  CategoricalPosterior post{tape.constant(logits.replicate(n, 1)), 1.0};
  Matrix y = gumbel_softmax_sample(post, uniform_draws(rng, n, 4)).value();
  std::vector<double> freq(4, 0.0);
  for (Eigen::Index r = 0; r < n; ++r) {
    Eigen::Index best;
    y.row(r).maxCoeff(&best);
    freq[static_cast<std::size_t>(best)] += 1.0 / n;
  }
  for (int k = 0; k < 4; ++k) {
    CAPTURE(k);
    CHECK(std::abs(freq[k] - p(0, k)) < 3.0 * std::sqrt(p(0, k) * (1 - p(0, k)) / n));
  }
}

TEST_CASE("kl_gaussian_standard") {
  Tape tape;
  auto kl = [&](const Matrix& mu, const Matrix& lv) {
    return kl_gaussian_standard({tape.constant(mu), tape.constant(lv)}).scalar();
  };
  CHECK(kl(Matrix::Zero(3, 2), Matrix::Zero(3, 2)) == 0.0);
  CHECK(kl(Matrix::Ones(1, 1), Matrix::Zero(1, 1)) == doctest::Approx(0.5).epsilon(1e-15));
  std::mt19937_64 rng(8);
  for (int i = 0; i < 50; ++i) CHECK(kl(random_matrix(rng, 3, 2, -2, 2), random_matrix(rng, 3, 2, -3, 3)) >= 0.0);
}

TEST_CASE("kl_gaussian_standard agrees with a Monte-Carlo estimate") {
  // KL(N(1, 1) || N(0, 1)) = E_q[log q(z) - log p(z)] = E[(z^2 - (z-1)^2) / 2]
  std::mt19937_64 rng(31);
  std::normal_distribution<double> normal;
  const int n = 1000000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 + normal(rng);
    const double term = 0.5 * (z * z - (z - 1.0) * (z - 1.0));
    s += term;
    s2 += term * term;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  CHECK(std::abs(mean - 0.5) < 3.0 * se);
}

TEST_CASE("kl_categorical_uniform") {
  Tape tape;
  auto kl = [&](const Matrix& logits) { return kl_categorical_uniform({tape.constant(logits), 0.5}).scalar(); };
  CHECK(kl(Matrix::Constant(2, 4, 0.3)) == doctest::Approx(0.0).epsilon(1e-15));
  Matrix one_hot = Matrix::Zero(1, 4);
  one_hot(0, 2) = 200.0;
  CHECK(kl(one_hot) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  std::mt19937_64 rng(12);
  for (int i = 0; i < 20; ++i) {
    Matrix logits = random_matrix(rng, 5, 4, -3, 3);
    const double v = kl(logits);
    CHECK(std::abs(v - categorical_kl_oracle(logits)) < 1e-10);
    CHECK(v >= 0.0);
    CHECK(v <= std::log(4.0));
  }
}

TEST_CASE("samplers and KL terms pass the finite-difference check") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor mu(random_matrix(rng, 3, 2), true), lv(random_matrix(rng, 3, 2), true);
    Tensor logits(random_matrix(rng, 3, 4, -2, 2), true);
    Matrix noise = random_matrix(rng, 3, 2, -2, 2);
    Matrix u = uniform_draws(rng, 3, 4);
    Matrix w = random_matrix(rng, 3, 4);
    CAPTURE(seed);
    CHECK(gradient_error({&mu, &lv}, [&](Tape& t) {
            return sum(square(gaussian_sample({t.leaf(mu), t.leaf(lv)}, noise)));
          }) < 1e-4);
    CHECK(gradient_error({&logits}, [&](Tape& t) {
            return sum(hadamard(gumbel_softmax_sample({t.leaf(logits), 0.7}, u), t.constant(w)));
          }) < 1e-4);
    CHECK(gradient_error({&mu, &lv}, [&](Tape& t) { return kl_gaussian_standard({t.leaf(mu), t.leaf(lv)}); }) <
          1e-4);
    CHECK(gradient_error({&logits}, [&](Tape& t) { return kl_categorical_uniform({t.leaf(logits), 0.7}); }) < 1e-4);
  }
}

TEST_CASE("joint KL of a product posterior separates into the two marginal KLs") {
  // One sample row; d_p = 2, K = 3. The categorical part is summed exactly,
  // the Gaussian part by Monte Carlo over the product space.
  Matrix mu(1, 2), lv(1, 2), logits(1, 3);
  mu << 0.4, -1.1;
  lv << -0.5, 0.3;
  logits << 1.0, -0.2, 0.4;
  Tape tape;
  const double expected = kl_gaussian_standard({tape.constant(mu), tape.constant(lv)}).scalar() +
                          kl_categorical_uniform({tape.constant(logits), 1.0}).scalar();

  Matrix p = logits.array().exp();
  p /= p.sum();
  std::mt19937_64 rng(77);
  std::normal_distribution<double> normal;
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double log_ratio_gauss = 0.0;
    for (int d = 0; d < 2; ++d) {
      const double sd = std::exp(0.5 * lv(0, d));
      const double eps = normal(rng);
      const double z = mu(0, d) + sd * eps;
      log_ratio_gauss += (-0.5 * eps * eps - std::log(sd)) - (-0.5 * z * z);
    }
    double value = 0.0;
    for (int k = 0; k < 3; ++k) value += p(0, k) * (log_ratio_gauss + std::log(p(0, k) * 3.0));
    s += value;
    s2 += value * value;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  CHECK(std::abs(mean - expected) < 3.0 * se);
}
