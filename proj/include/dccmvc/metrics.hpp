#pragma once

// Representation extraction, k-means, and external clustering metrics.

#include "dccmvc/data.hpp"
#include "dccmvc/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dccmvc {

struct Partition {
  std::vector<int> labels;  // values in [0, k)
  int k = 0;

  static Partition from_labels(std::vector<int> labels);
  std::size_t size() const { return labels.size(); }
};

struct MetricReport {
  double acc = 0.0;
  double nmi = 0.0;
  double pur = 0.0;
  int k = 0;
  long n = 0;
  std::uint64_t seed = 0;

  std::string to_json() const;
};

// [mu_1 | ... | mu_V | softmax(sum_v logits_v)], computed without sampling.
Matrix extract_representation(DccmvcModel& model, const MultiViewDataset& data);
// softmax(sum_v logits_v) only.
Matrix fused_shared_probabilities(DccmvcModel& model, const MultiViewDataset& data);

struct KMeansResult {
  Partition partition;
  Matrix centroids;
  double inertia = 0.0;
};

// Lloyd iterations from k-means++ seeds; the restart with the lowest inertia
// wins (ties go to the earlier restart). A centroid that loses all its points
// is moved onto the point farthest from its current centroid.
KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iter = 300,
                    int restarts = 10);

double inertia(const Matrix& points, const Partition& partition);

// Row-major pred.k x truth.k count table.
std::vector<std::vector<long>> contingency(const Partition& pred, const Partition& truth);

// Maximum-weight assignment of rows to columns of a square or rectangular
// matrix (Hungarian algorithm). Returns the column assigned to each row, or -1.
std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weights);

double accuracy(const Partition& pred, const Partition& truth);

enum class NmiNormalization { kGeometric, kArithmetic };
double nmi(const Partition& pred, const Partition& truth,
           NmiNormalization norm = NmiNormalization::kGeometric);

double purity(const Partition& pred, const Partition& truth);

MetricReport evaluate(const Partition& pred, const Partition& truth, std::uint64_t seed,
                      NmiNormalization norm = NmiNormalization::kGeometric);

enum class AssignMode { kKMeans, kArgmaxShared };
AssignMode parse_assign_mode(const std::string& name);

// Final cluster assignment of every sample in `data`.
Partition assign_clusters(DccmvcModel& model, const MultiViewDataset& data, AssignMode mode,
                          std::uint64_t seed);

}  // namespace dccmvc
