#pragma once

#include "dccmvc/numerics.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dccmvc {

struct MultiViewDataset {
  std::vector<Matrix> views;               // each n x D_v, rows aligned across views
  std::optional<std::vector<int>> labels;  // length n, values in [0, K)
  int num_classes = 0;
  std::string name;

  Eigen::Index num_samples() const { return views.empty() ? 0 : views.front().rows(); }
  std::vector<Eigen::Index> view_dims() const;

  // Checks row alignment and label range; throws std::invalid_argument.
  void validate() const;
  // Rows in the given order (used for batching and permutation tests).
  MultiViewDataset subset(const std::vector<Eigen::Index>& rows) const;
};

enum class DataFormat { kCsv, kDccb };
DataFormat parse_data_format(const std::string& name);

// csv: `path` is a directory holding view0.csv, view1.csv, ... and optionally
// labels.csv. dccb: `path` is the binary file.
MultiViewDataset load_dataset(const std::filesystem::path& path, DataFormat format);
MultiViewDataset load_csv(const std::filesystem::path& dir);
MultiViewDataset load_dccb(const std::filesystem::path& file);

void save_csv(const MultiViewDataset& data, const std::filesystem::path& dir);
void save_dccb(const MultiViewDataset& data, const std::filesystem::path& file);

enum class Normalization { kNone, kMinMax, kZScore };
Normalization parse_normalization(const std::string& name);

// Each feature column to [0, 1]; constant columns become 0.
MultiViewDataset normalize_minmax(const MultiViewDataset& data);
// Each feature column to zero mean, unit variance; constant columns become 0.
MultiViewDataset normalize_zscore(const MultiViewDataset& data);
MultiViewDataset normalize(const MultiViewDataset& data, Normalization mode);

enum class Mixing { kLinear, kTanh };

struct SynthSpec {
  int n = 600;
  int clusters = 3;
  int views = 2;
  int d_shared = 3;
  int d_private = 4;
  int view_dim = 20;
  Mixing mixing = Mixing::kTanh;
  double noise_sigma = 0.1;
  // Minimum distance between class means in shared-factor space; raised to
  // 4 * noise_sigma when smaller.
  double separation = 3.0;
  // Standard deviation of the within-class shared jitter, as a fraction of noise_sigma.
  double jitter = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// y ~ Uniform{0..K-1}; shared = mean_y + jitter; private_v ~ N(0, I);
// x_v = mixing(W_v [shared; private_v]) + N(0, noise_sigma^2).
MultiViewDataset synth_generate(const SynthSpec& spec);

}  // namespace dccmvc
