#include "support.hpp"

#include "dccmvc/losses.hpp"

#include <doctest.h>

#include <cmath>

using namespace dccmvc;
using dccmvc::testing::gradient_error;
using dccmvc::testing::random_matrix;
using dccmvc::testing::random_stochastic;
using dccmvc::testing::ToyProblem;
using dccmvc::testing::toy_config;

namespace {

// Sum over all entries of (a - b)^2, divided by the row count.
double mse_oracle(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) s += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  return s / static_cast<double>(a.rows());
}

// I = sum_kl P_kl (log P_kl - (eta+1)(log P_k + log P_l)) over the symmetrized joint.
double mutual_info_oracle(const Matrix& q1, const Matrix& q2, double eta = 0.0) {
  const Eigen::Index n = q1.rows(), k = q1.cols();
  Matrix p = Matrix::Zero(k, k);
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = 0; b < k; ++b) {
      for (Eigen::Index i = 0; i < n; ++i) p(a, b) += q1(i, a) * q2(i, b) + q1(i, b) * q2(i, a);
      p(a, b) /= 2.0 * static_cast<double>(n);
    }
  std::vector<double> row(k, 0.0), col(k, 0.0);
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = 0; b < k; ++b) {
      row[a] += p(a, b);
      col[b] += p(a, b);
    }
  double mi = 0.0;
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = 0; b < k; ++b)
      if (p(a, b) > 0) mi += p(a, b) * (std::log(p(a, b)) - (eta + 1.0) * (std::log(row[a]) + std::log(col[b])));
  return mi;
}

double marginal_entropy_oracle(const Matrix& q) {
  double h = 0.0;
  for (Eigen::Index c = 0; c < q.cols(); ++c) {
    const double m = q.col(c).mean();
    if (m > 0) h -= m * std::log(m);
  }
  return h;
}

double kl_gauss(Tape& tape, const Matrix& mu, const Matrix& lv) {
  return kl_gaussian_standard({tape.constant(mu), tape.constant(lv)}).scalar();
}
double kl_cat(Tape& tape, const Matrix& logits) { return kl_categorical_uniform({tape.constant(logits), 1.0}).scalar(); }

// Model whose posterior equals the prior and whose decoder emits a fixed row,
// so data made of that row is reconstructed exactly.
DccmvcModel constant_model(const std::vector<Matrix>& rows) {
  std::vector<Eigen::Index> dims;
  for (const Matrix& r : rows) dims.push_back(r.cols());
  ModelConfig c = toy_config();
  c.output = OutputActivation::kIdentity;
  DccmvcModel m(dims, c);
  m.init_parameters(1);
  for (std::size_t v = 0; v < rows.size(); ++v) {
    ViewNetwork& net = m.view(v);
    for (Linear* head : {&net.mu_head, &net.log_var_head, &net.logits_head}) head->weight.mutable_value().setZero();
    for (Linear& l : net.decoder) l.weight.mutable_value().setZero();
    net.decoder.back().bias.mutable_value() = rows[v];
  }
  return m;
}

}  // namespace

TEST_CASE("squared_error") {
  Tape tape;
  Matrix x(1, 2);
  x << 1, 1;
  CHECK(squared_error(tape.constant(x), tape.constant(Matrix::Zero(1, 2))).scalar() == 2.0);
  std::mt19937_64 rng(1);
  Matrix a = random_matrix(rng, 4, 3);
  CHECK(squared_error(tape.constant(a), tape.constant(a)).scalar() == 0.0);
}

TEST_CASE("loss_rec matches an entrywise oracle") {
  ToyProblem toy(2);
  Tape tape;
  auto views = toy.view_vars(tape);
  LatentState s = infer_latents(toy.model, tape, views, toy.noise);
  const double got = loss_rec(toy.model, tape, views, s.z_private, s.z_shared).scalar();
  double expected = 0.0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    expected += mse_oracle(toy.views[v], decode(toy.model, tape, v, s.z_private[v], s.z_shared[v]).value());
  }
  CHECK(std::abs(got - expected) < 1e-12);
  CHECK(got >= 0.0);
}

TEST_CASE("autoencoder codes are the posterior means and shared probabilities") {
  ToyProblem toy(3);
  Tape tape;
  auto views = toy.view_vars(tape);
  LatentState s = infer_latents(toy.model, tape, views, toy.noise);
  std::vector<Var> zp, zs;
  autoencoder_codes(s.posteriors, zp, zs);
  REQUIRE(zp.size() == 2);
  for (std::size_t v = 0; v < 2; ++v) {
    CHECK(zp[v].value() == s.posteriors[v].priv.mu.value());
    CHECK(zs[v].value() == row_softmax(s.posteriors[v].shared.logits).value());
  }
}

TEST_CASE("loss_within") {
  SUBCASE("posterior at prior with perfect reconstruction is zero") {
    std::mt19937_64 rng(4);
    std::vector<Matrix> rows = {random_matrix(rng, 1, 5), random_matrix(rng, 1, 4)};
    DccmvcModel m = constant_model(rows);
    Tape tape;
    std::vector<Var> views = {tape.constant(rows[0].replicate(3, 1)), tape.constant(rows[1].replicate(3, 1))};
    NoiseBundle noise = NoiseBundle::draw(rng, 3, 2, 4, 3);
    LatentState s = infer_latents(m, tape, views, noise);
    CHECK(std::abs(loss_within(m, tape, views, s, 1.0).scalar()) < 1e-15);
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    ToyProblem toy(seed + 10);
    Tape tape;
    auto views = toy.view_vars(tape);
    LatentState s = infer_latents(toy.model, tape, views, toy.noise);
    double kls = 0.0, nll = 0.0;
    for (std::size_t v = 0; v < 2; ++v) {
      kls += kl_gauss(tape, s.posteriors[v].priv.mu.value(), s.posteriors[v].priv.log_var.value()) +
             kl_cat(tape, s.posteriors[v].shared.logits.value());
      nll += mse_oracle(toy.views[v], decode(toy.model, tape, v, s.z_private[v], s.z_shared[v]).value());
    }
    CHECK(loss_within(toy.model, tape, views, s, 0.0).scalar() == doctest::Approx(kls).epsilon(1e-14));
    CHECK(std::abs(loss_within(toy.model, tape, views, s, 0.7).scalar() - (0.7 * nll + kls)) < 1e-10);
    CHECK(nll >= 0.0);
  }
}

TEST_CASE("latent draws follow the supplied noise") {
  ToyProblem toy(5);
  Tape tape;
  auto views = toy.view_vars(tape);
  LatentState s = infer_latents(toy.model, tape, views, toy.noise);
  for (std::size_t v = 0; v < 2; ++v) {
    const auto& post = s.posteriors[v];
    Matrix zp = post.priv.mu.value().array() +
                (0.5 * post.priv.log_var.value().array()).exp() * toy.noise.private_noise[v].array();
    CHECK((s.z_private[v].value() - zp).cwiseAbs().maxCoeff() < 1e-14);
  }
  Matrix fused = s.posteriors[0].shared.logits.value() + s.posteriors[1].shared.logits.value();
  CHECK((s.fused.logits.value() - fused).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(s.z_fused.value() == gumbel_softmax_sample({tape.constant(fused), toy.model.tau()}, toy.noise.fused_uniform).value());
}

TEST_CASE("loss_cross") {
  SUBCASE("single view with omega = epsilon equals loss_within") {
    ToyProblem toy(6, 5, {5});
    toy.noise.fused_uniform = toy.noise.shared_uniform[0];
    Tape tape;
    auto views = toy.view_vars(tape);
    LatentState s = infer_latents(toy.model, tape, views, toy.noise);
    for (double w : {0.0, 0.5, 1.0, 2.0}) {
      CHECK(std::abs(loss_cross(toy.model, tape, views, s, w).scalar() -
                     loss_within(toy.model, tape, views, s, w).scalar()) < 1e-12);
    }
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    ToyProblem toy(seed + 20);
    Tape tape;
    auto views = toy.view_vars(tape);
    LatentState s = infer_latents(toy.model, tape, views, toy.noise);
    // Explicit double sum over (i, j).
    double with_omega = 0.0, kl_only = 0.0;
    const double omega = 1.3;
    for (std::size_t i = 0; i < 2; ++i) {
      const double nll_i = mse_oracle(toy.views[i], decode(toy.model, tape, i, s.z_private[i], s.z_fused).value());
      const double klg_i = kl_gauss(tape, s.posteriors[i].priv.mu.value(), s.posteriors[i].priv.log_var.value());
      for (std::size_t j = 0; j < 2; ++j) {
        const double klc_j = kl_cat(tape, s.posteriors[j].shared.logits.value());
        with_omega += omega * nll_i + klg_i + klc_j;
        kl_only += klg_i + klc_j;
      }
    }
    CHECK(std::abs(loss_cross(toy.model, tape, views, s, omega).scalar() - with_omega) < 1e-10);
    CHECK(std::abs(loss_cross(toy.model, tape, views, s, 0.0).scalar() - kl_only) < 1e-12);
  }
}

TEST_CASE("loss_shared_inference") {
  SUBCASE("single view is zero") {
    ToyProblem toy(7, 4, {5});
    Tape tape;
    auto views = toy.view_vars(tape);
    LatentState s = infer_latents(toy.model, tape, views, toy.noise);
    CHECK(loss_shared_inference(toy.model, tape, views, s).scalar() == 0.0);
  }
  SUBCASE("identical views with an exact decoder give zero") {
    std::mt19937_64 rng(8);
    Matrix row = random_matrix(rng, 1, 4);
    DccmvcModel m = constant_model({row, row});
    Tape tape;
    Var x = tape.constant(row.replicate(3, 1));
    std::vector<Var> views = {x, x};
    NoiseBundle noise = NoiseBundle::draw(rng, 3, 2, 4, 3);
    LatentState s = infer_latents(m, tape, views, noise);
    CHECK(std::abs(loss_shared_inference(m, tape, views, s).scalar()) < 1e-15);
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    ToyProblem toy(seed + 30, 4, {5, 4, 3});
    Tape tape;
    auto views = toy.view_vars(tape);
    LatentState s = infer_latents(toy.model, tape, views, toy.noise);
    double expected = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        if (i == j) continue;
        Matrix recon =
            decode(toy.model, tape, j, tape.constant(toy.noise.prior_private[j]), s.z_shared[i]).value();
        expected += mse_oracle(toy.views[j], recon);
      }
    const double got = loss_shared_inference(toy.model, tape, views, s).scalar();
    CHECK(std::abs(got - expected) < 1e-10);
    CHECK(got >= 0.0);
  }
}

TEST_CASE("loss_contrastive examples") {
  Tape tape;
  SUBCASE("balanced identical one-hot assignments reach -log K") {
    Matrix q(4, 2);
    q << 1, 0, 0, 1, 1, 0, 0, 1;
    CHECK(loss_contrastive(tape.constant(q), tape.constant(q), 0.0, 0.0).scalar() ==
          doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("uniform rows carry no information") {
    for (Eigen::Index k : {2, 3, 5}) {
      Matrix q = Matrix::Constant(6, k, 1.0 / static_cast<double>(k));
      const double ew = 0.8;
      CHECK(std::abs(loss_contrastive(tape.constant(q), tape.constant(q), 0.0, 0.0).scalar()) < 1e-12);
      CHECK(loss_contrastive(tape.constant(q), tape.constant(q), 0.0, ew).scalar() ==
            doctest::Approx(-ew * 2.0 * std::log(static_cast<double>(k))).epsilon(1e-12));
    }
  }
  SUBCASE("random pairs match the double-sum oracle") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      Matrix q1 = random_stochastic(rng, 8, 3), q2 = random_stochastic(rng, 8, 3);
      const double mi = -loss_contrastive(tape.constant(q1), tape.constant(q2), 0.0, 0.0).scalar();
      CHECK(std::abs(mi - mutual_info_oracle(q1, q2)) < 1e-10);
      CHECK(mi >= -1e-12);
      CHECK(mi <= std::log(3.0) + 1e-12);
      const double eta = 0.5, ew = 0.3;
      const double full = loss_contrastive(tape.constant(q1), tape.constant(q2), eta, ew).scalar();
      const double oracle =
          -(mutual_info_oracle(q1, q2, eta) + ew * (marginal_entropy_oracle(q1) + marginal_entropy_oracle(q2)));
      CHECK(std::abs(full - oracle) < 1e-10);
      const double swapped = loss_contrastive(tape.constant(q2), tape.constant(q1), eta, ew).scalar();
      CHECK(std::abs(full - swapped) < 1e-12);
    }
  }
  SUBCASE("degenerate inputs stay finite") {
    Matrix q = Matrix::Zero(3, 4);
    q.col(0).setOnes();
    CHECK(std::isfinite(loss_contrastive(tape.constant(q), tape.constant(q), 0.5, 1.0).scalar()));
  }
  SUBCASE("rows off the simplex are rejected") {
    Matrix q = Matrix::Constant(2, 2, 0.5);
    Matrix bad = q;
    bad(1, 0) = 0.6;
    CHECK_THROWS_AS(loss_contrastive(tape.constant(q), tape.constant(bad), 0.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(loss_contrastive(tape.constant(q), tape.constant(Matrix::Constant(2, 3, 1.0 / 3)), 0.0, 1.0),
                    std::invalid_argument);
  }
}

TEST_CASE("loss_contrastive_views averages unordered pairs") {
  std::mt19937_64 rng(10);
  Tape tape;
  std::vector<Var> q;
  for (int v = 0; v < 3; ++v) q.push_back(tape.constant(random_stochastic(rng, 6, 3)));
  double expected = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) expected += loss_contrastive(q[i], q[j], 0.2, 0.9).scalar() / 3.0;
  CHECK(std::abs(loss_contrastive_views(tape, q, 0.2, 0.9).scalar() - expected) < 1e-12);
  CHECK(loss_contrastive_views(tape, std::span(q.data(), 2), 0.2, 0.9).scalar() ==
        loss_contrastive(q[0], q[1], 0.2, 0.9).scalar());
  CHECK(loss_contrastive_views(tape, std::span(q.data(), 1), 0.2, 0.9).scalar() == 0.0);
}

TEST_CASE("loss_total") {
  SUBCASE("default weights") {
    LossWeights w;
    CHECK(w.alpha == 1.0);
    CHECK(w.beta == 0.01);
    CHECK(w.gamma == 0.01);
  }
  SUBCASE("weight validation") {
    LossWeights w;
    w.beta = -1.0;
    CHECK_THROWS_AS(w.validate(), std::invalid_argument);
    w = LossWeights{};
    w.eta = std::nan("");
    CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    ToyProblem toy(seed + 40);
    LossWeights w;
    w.alpha = 0.9;
    w.beta = 0.3;
    w.gamma = 0.7;
    Tape tape;
    auto views = toy.view_vars(tape);
    LossTerms t = loss_total(toy.model, tape, views, w, toy.noise);
    const LossReport& r = t.report;
    CHECK(std::abs(r.total - (w.alpha * r.rec + w.beta * (r.cross + r.within + r.shared_inference) +
                              w.gamma * r.contrastive)) < 1e-10);
    CHECK(t.total.scalar() == r.total);
    CHECK(r.rec >= 0.0);
    CHECK(r.shared_inference >= 0.0);

    // Components recomputed independently from the same noise.
    LatentState s = infer_latents(toy.model, tape, views, toy.noise);
    std::vector<Var> zp, zs;
    autoencoder_codes(s.posteriors, zp, zs);
    CHECK(r.rec == loss_rec(toy.model, tape, views, zp, zs).scalar());
    CHECK(r.within == loss_within(toy.model, tape, views, s, w.epsilon).scalar());
    CHECK(r.cross == loss_cross(toy.model, tape, views, s, w.omega).scalar());
    CHECK(r.shared_inference == loss_shared_inference(toy.model, tape, views, s).scalar());

    LossWeights rec_only = w;
    rec_only.beta = rec_only.gamma = 0.0;
    LossTerms t2 = loss_total(toy.model, tape, views, rec_only, toy.noise);
    CHECK(t2.report.total == doctest::Approx(rec_only.alpha * t2.report.rec).epsilon(1e-15));

    LossTerms pre = loss_pretrain(toy.model, tape, views, rec_only);
    CHECK(pre.report.rec == r.rec);
    CHECK(pre.report.total == doctest::Approx(rec_only.alpha * r.rec).epsilon(1e-15));
  }
}

TEST_CASE("losses stay finite on extreme batches") {
  ToyProblem toy(50);
  for (Matrix& v : toy.views) v *= 1e3;
  Tape tape;
  auto views = toy.view_vars(tape);
  LossTerms t = loss_total(toy.model, tape, views, LossWeights{}, toy.noise);
  CHECK(std::isfinite(t.report.total));
  CHECK(std::isfinite(t.report.contrastive));
}

TEST_CASE("every loss term passes the finite-difference check") {
  const double tol = 1e-3;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CAPTURE(seed);
    ToyProblem toy(seed + 60);
    auto params = toy.tensors();
    auto with_state = [&](auto term) {
      return [&toy, term](Tape& tape) {
        auto views = toy.view_vars(tape);
        LatentState s = infer_latents(toy.model, tape, views, toy.noise);
        return term(tape, views, s);
      };
    };
    LossWeights w;
    w.beta = 0.5;
    w.gamma = 0.5;
    w.eta = 0.2;
    CHECK(gradient_error(params, [&](Tape& tape) {
            auto views = toy.view_vars(tape);
            return loss_total(toy.model, tape, views, w, toy.noise).total;
          }) < tol);
    CHECK(gradient_error(params, [&](Tape& tape) {
            auto views = toy.view_vars(tape);
            return loss_pretrain(toy.model, tape, views, w).total;
          }) < tol);
    CHECK(gradient_error(params, with_state([&](Tape& t, auto& v, LatentState& s) {
                           return loss_within(toy.model, t, v, s, 0.8);
                         })) < tol);
    CHECK(gradient_error(params, with_state([&](Tape& t, auto& v, LatentState& s) {
                           return loss_cross(toy.model, t, v, s, 1.2);
                         })) < tol);
    CHECK(gradient_error(params, with_state([&](Tape& t, auto& v, LatentState& s) {
                           return loss_shared_inference(toy.model, t, v, s);
                         })) < tol);
    CHECK(gradient_error(params, with_state([&](Tape& t, auto&, LatentState& s) {
                           const Var q[] = {row_softmax(s.posteriors[0].shared.logits),
                                            row_softmax(s.posteriors[1].shared.logits)};
                           return loss_contrastive_views(t, q, 0.3, 0.7);
                         })) < tol);
  }
}

TEST_CASE("zeroing a weight removes exactly that term's gradient") {
  ToyProblem toy(70);
  LossWeights base;
  base.alpha = 0.8;
  base.beta = 0.4;
  base.gamma = 0.6;

  auto gradients = [&](const LossWeights& w) {
    toy.model.zero_grad();
    Tape tape;
    auto views = toy.view_vars(tape);
    tape.backward(loss_total(toy.model, tape, views, w, toy.noise).total);
    std::vector<Matrix> g;
    for (ParameterRef& p : toy.model.parameters())
      g.push_back(p.tensor->grad() ? *p.tensor->grad() : Matrix::Zero(p.tensor->rows(), p.tensor->cols()));
    return g;
  };
  auto term_gradients = [&](auto build) {
    toy.model.zero_grad();
    Tape tape;
    auto views = toy.view_vars(tape);
    LatentState s = infer_latents(toy.model, tape, views, toy.noise);
    tape.backward(build(tape, views, s));
    std::vector<Matrix> g;
    for (ParameterRef& p : toy.model.parameters())
      g.push_back(p.tensor->grad() ? *p.tensor->grad() : Matrix::Zero(p.tensor->rows(), p.tensor->cols()));
    return g;
  };

  const auto full = gradients(base);
  const auto rec = term_gradients([&](Tape& t, auto& v, LatentState& s) {
    std::vector<Var> zp, zs;
    autoencoder_codes(s.posteriors, zp, zs);
    return loss_rec(toy.model, t, v, zp, zs);
  });
  const auto consistency = term_gradients([&](Tape& t, auto& v, LatentState& s) {
    return add(add(loss_cross(toy.model, t, v, s, base.omega), loss_within(toy.model, t, v, s, base.epsilon)),
               loss_shared_inference(toy.model, t, v, s));
  });
  const auto contrastive = term_gradients([&](Tape& t, auto&, LatentState& s) {
    std::vector<Var> q;
    for (auto& p : s.posteriors) q.push_back(row_softmax(p.shared.logits));
    return loss_contrastive_views(t, q, base.eta, base.entropy_weight);
  });

  struct Case {
    const char* name;
    double LossWeights::*field;
    const std::vector<Matrix>* term;
  };
  for (const Case& c : {Case{"alpha", &LossWeights::alpha, &rec}, Case{"beta", &LossWeights::beta, &consistency},
                        Case{"gamma", &LossWeights::gamma, &contrastive}}) {
    CAPTURE(c.name);
    LossWeights w = base;
    w.*c.field = 0.0;
    const auto reduced = gradients(w);
    double worst = 0.0;
    for (std::size_t i = 0; i < full.size(); ++i) {
      const Matrix removed = full[i] - reduced[i] - base.*c.field * (*c.term)[i];
      worst = std::max(worst, removed.cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-10);
  }
}
