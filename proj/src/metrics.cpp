#include "dccmvc/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace dccmvc {

namespace {

constexpr Eigen::Index kInferenceChunk = 512;

void check_lengths(const Partition& a, const Partition& b, const char* what) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(what) + ": partitions have lengths " + std::to_string(a.size()) +
                                " and " + std::to_string(b.size()));
  }
  if (a.size() == 0) throw std::invalid_argument(std::string(what) + ": empty partitions");
}

// Runs the encoders chunk by chunk; fn(row_offset, posteriors) sees each chunk.
template <typename Fn>
void encode_chunks(DccmvcModel& model, const MultiViewDataset& data, Fn&& fn) {
  if (data.views.size() != model.num_views()) {
    throw std::invalid_argument("dataset has " + std::to_string(data.views.size()) + " views, model has " +
                                std::to_string(model.num_views()));
  }
  const Eigen::Index n = data.num_samples();
  for (Eigen::Index start = 0; start < n; start += kInferenceChunk) {
    const Eigen::Index rows = std::min(kInferenceChunk, n - start);
    Tape tape;
    std::vector<ViewPosteriors> posteriors;
    for (std::size_t v = 0; v < data.views.size(); ++v) {
      Var x = tape.constant(data.views[v].middleRows(start, rows));
      posteriors.push_back(encode(model, tape, v, x));
    }
    fn(start, posteriors);
  }
}

Matrix fused_probabilities(const std::vector<ViewPosteriors>& posteriors) {
  std::vector<CategoricalPosterior> shared;
  for (const auto& p : posteriors) shared.push_back(p.shared);
  return row_softmax(fuse_shared(shared).logits).value();
}

double squared_distance(const Matrix& points, Eigen::Index i, const Matrix& centroids, Eigen::Index c) {
  return (points.row(i) - centroids.row(c)).squaredNorm();
}

KMeansResult lloyd(const Matrix& points, int k, std::mt19937_64& rng, int max_iter) {
  const Eigen::Index n = points.rows();
  Matrix centroids(k, points.cols());
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());

  // k-means++ seeding
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centroids.row(0) = points.row(first(rng));
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points, i, centroids, c - 1));
      total += d2[i];
    }
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0 && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = first(rng);
    }
    centroids.row(c) = points.row(pick);
  }

  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = squared_distance(points, i, centroids, 0);
      for (int c = 1; c < k; ++c) {
        const double d = squared_distance(points, i, centroids, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;

    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<long> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += points.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centroids.row(c) = sums.row(c) / static_cast<double>(counts[c]);
        continue;
      }
      // Empty cluster: take the point farthest from its own centroid.
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = squared_distance(points, i, centroids, assign[i]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      centroids.row(c) = points.row(far);
      --counts[assign[far]];
      assign[far] = c;
      counts[c] = 1;
    }
  }

  KMeansResult result;
  result.partition.labels = std::move(assign);
  result.partition.k = k;
  result.centroids = std::move(centroids);
  result.inertia = inertia(points, result.partition);
  return result;
}

double entropy_of_counts(const std::vector<long>& counts, double n) {
  double h = 0.0;
  for (long c : counts) {
    if (c > 0) {
      const double p = static_cast<double>(c) / n;
      h -= p * std::log(p);
    }
  }
  return h;
}

}  // namespace

Partition Partition::from_labels(std::vector<int> labels) {
  Partition p;
  for (int y : labels) {
    if (y < 0) throw std::invalid_argument("partition labels must be non-negative");
    p.k = std::max(p.k, y + 1);
  }
  p.labels = std::move(labels);
  return p;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["acc"] = acc;
  j["nmi"] = nmi;
  j["pur"] = pur;
  j["k"] = k;
  j["n"] = n;
  j["seed"] = seed;
  return j.dump();
}

Matrix extract_representation(DccmvcModel& model, const MultiViewDataset& data) {
  const Eigen::Index dp = model.private_dim();
  const auto num_views = static_cast<Eigen::Index>(model.num_views());
  Matrix out(data.num_samples(), num_views * dp + model.clusters());
  encode_chunks(model, data, [&](Eigen::Index start, const std::vector<ViewPosteriors>& posteriors) {
    const Eigen::Index rows = posteriors.front().priv.mu.rows();
    for (Eigen::Index v = 0; v < num_views; ++v) {
      out.block(start, v * dp, rows, dp) = posteriors[static_cast<std::size_t>(v)].priv.mu.value();
    }
    out.block(start, num_views * dp, rows, model.clusters()) = fused_probabilities(posteriors);
  });
  return out;
}

Matrix fused_shared_probabilities(DccmvcModel& model, const MultiViewDataset& data) {
  Matrix out(data.num_samples(), model.clusters());
  encode_chunks(model, data, [&](Eigen::Index start, const std::vector<ViewPosteriors>& posteriors) {
    Matrix p = fused_probabilities(posteriors);
    out.middleRows(start, p.rows()) = p;
  });
  return out;
}

double inertia(const Matrix& points, const Partition& partition) {
  Matrix centroids = Matrix::Zero(partition.k, points.cols());
  std::vector<long> counts(static_cast<std::size_t>(partition.k), 0);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    centroids.row(partition.labels[i]) += points.row(i);
    ++counts[partition.labels[i]];
  }
  for (int c = 0; c < partition.k; ++c) {
    if (counts[c] > 0) centroids.row(c) /= static_cast<double>(counts[c]);
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) total += squared_distance(points, i, centroids, partition.labels[i]);
  return total;
}

KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iter, int restarts) {
  if (k <= 0 || k > points.rows()) {
    throw std::invalid_argument("kmeans: k=" + std::to_string(k) + " must lie in [1, n=" +
                                std::to_string(points.rows()) + "]");
  }
  if (!points.allFinite()) throw std::invalid_argument("kmeans: non-finite points");
  if (restarts < 1 || max_iter < 1) throw std::invalid_argument("kmeans: restarts and max_iter must be >= 1");
  std::mt19937_64 master(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    std::mt19937_64 rng(master());
    KMeansResult candidate = lloyd(points, k, rng, max_iter);
    if (candidate.inertia < best.inertia) best = std::move(candidate);
  }
  return best;
}

std::vector<std::vector<long>> contingency(const Partition& pred, const Partition& truth) {
  check_lengths(pred, truth, "contingency");
  std::vector<std::vector<long>> table(static_cast<std::size_t>(pred.k),
                                       std::vector<long>(static_cast<std::size_t>(truth.k), 0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int a = pred.labels[i], b = truth.labels[i];
    if (a < 0 || a >= pred.k || b < 0 || b >= truth.k) throw std::invalid_argument("label outside [0, k)");
    ++table[a][b];
  }
  return table;
}

std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weights) {
  const std::size_t rows = weights.size();
  const std::size_t cols = rows ? weights.front().size() : 0;
  const std::size_t n = std::max(rows, cols);
  if (n == 0) return {};
  double top = 0.0;
  for (const auto& r : weights) {
    for (double w : r) top = std::max(top, w);
  }
  // Square min-cost problem with cost = top - weight; padding cells cost `top`.
  auto cost = [&](std::size_t i, std::size_t j) {
    return (i < rows && j < cols) ? top - weights[i][j] : top;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(rows, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    if (p[j] >= 1 && p[j] <= rows && j <= cols) assignment[p[j] - 1] = static_cast<int>(j - 1);
  }
  return assignment;
}

double accuracy(const Partition& pred, const Partition& truth) {
  const auto table = contingency(pred, truth);
  std::vector<std::vector<double>> w(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) w[i].assign(table[i].begin(), table[i].end());
  const auto assignment = max_weight_assignment(w);
  long matched = 0;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] >= 0) matched += table[i][static_cast<std::size_t>(assignment[i])];
  }
  return static_cast<double>(matched) / static_cast<double>(pred.size());
}

double nmi(const Partition& pred, const Partition& truth, NmiNormalization norm) {
  const auto table = contingency(pred, truth);
  const double n = static_cast<double>(pred.size());
  std::vector<long> a(table.size(), 0), b(static_cast<std::size_t>(truth.k), 0);
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (std::size_t j = 0; j < table[i].size(); ++j) {
      a[i] += table[i][j];
      b[j] += table[i][j];
    }
  }
  const double ha = entropy_of_counts(a, n);
  const double hb = entropy_of_counts(b, n);
  if (ha <= 0.0 || hb <= 0.0) return (ha <= 0.0 && hb <= 0.0) ? 1.0 : 0.0;
  double mi = 0.0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (std::size_t j = 0; j < table[i].size(); ++j) {
      const long c = table[i][j];
      if (c == 0) continue;
      mi += (static_cast<double>(c) / n) *
            std::log(n * static_cast<double>(c) / (static_cast<double>(a[i]) * static_cast<double>(b[j])));
    }
  }
  const double denom = norm == NmiNormalization::kGeometric ? std::sqrt(ha * hb) : 0.5 * (ha + hb);
  return std::clamp(mi / denom, 0.0, 1.0);
}

double purity(const Partition& pred, const Partition& truth) {
  const auto table = contingency(pred, truth);
  long total = 0;
  for (const auto& row : table) total += row.empty() ? 0 : *std::max_element(row.begin(), row.end());
  return static_cast<double>(total) / static_cast<double>(pred.size());
}

MetricReport evaluate(const Partition& pred, const Partition& truth, std::uint64_t seed, NmiNormalization norm) {
  MetricReport r;
  r.acc = accuracy(pred, truth);
  r.nmi = nmi(pred, truth, norm);
  r.pur = purity(pred, truth);
  r.k = pred.k;
  r.n = static_cast<long>(pred.size());
  r.seed = seed;
  return r;
}

AssignMode parse_assign_mode(const std::string& name) {
  if (name == "kmeans") return AssignMode::kKMeans;
  if (name == "argmax-shared") return AssignMode::kArgmaxShared;
  throw std::invalid_argument("unknown assignment mode '" + name + "' (expected kmeans or argmax-shared)");
}

Partition assign_clusters(DccmvcModel& model, const MultiViewDataset& data, AssignMode mode, std::uint64_t seed) {
  const int k = static_cast<int>(model.clusters());
  if (mode == AssignMode::kKMeans) return kmeans(extract_representation(model, data), k, seed).partition;
  Matrix probs = fused_shared_probabilities(model, data);
  Partition p;
  p.k = k;
  p.labels.resize(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    probs.row(i).maxCoeff(&best);
    p.labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return p;
}

}  // namespace dccmvc
