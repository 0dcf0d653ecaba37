#include "dccmvc/data.hpp"

#include "binary_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace dccmvc {

namespace {

constexpr std::uint32_t kDccbVersion = 1;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_cell(const std::string& cell, const std::filesystem::path& file, std::size_t row,
                  std::size_t col) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(value)) {
    throw std::invalid_argument(file.string() + ": non-numeric cell '" + cell + "' at row " +
                                std::to_string(row + 1) + ", column " + std::to_string(col + 1));
  }
  return value;
}

Matrix read_csv_matrix(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::invalid_argument("cannot open " + file.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(parse_cell(trim(cell), file, rows.size(), row.size()));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::invalid_argument(file.string() + ": row " + std::to_string(rows.size() + 1) + " has " +
                                  std::to_string(row.size()) + " columns, expected " +
                                  std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::invalid_argument(file.string() + ": no rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

std::vector<int> read_labels(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::invalid_argument("cannot open " + file.string());
  std::vector<int> labels;
  std::string line;
  while (std::getline(in, line)) {
    const std::string cell = trim(line);
    if (cell.empty()) continue;
    int value = 0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) {
      throw std::invalid_argument(file.string() + ": non-integer label '" + cell + "' at row " +
                                  std::to_string(labels.size() + 1));
    }
    labels.push_back(value);
  }
  return labels;
}

int infer_num_classes(const std::vector<int>& labels) {
  int k = 0;
  for (int y : labels) k = std::max(k, y + 1);
  return k;
}

template <typename ColumnFn>
MultiViewDataset map_columns(const MultiViewDataset& data, ColumnFn fn) {
  MultiViewDataset out = data;
  for (Matrix& view : out.views) {
    for (Eigen::Index c = 0; c < view.cols(); ++c) fn(view.col(c));
  }
  return out;
}

}  // namespace

std::vector<Eigen::Index> MultiViewDataset::view_dims() const {
  std::vector<Eigen::Index> dims;
  for (const Matrix& v : views) dims.push_back(v.cols());
  return dims;
}

void MultiViewDataset::validate() const {
  if (views.empty()) throw std::invalid_argument("dataset has no views");
  const Eigen::Index n = views.front().rows();
  for (std::size_t v = 1; v < views.size(); ++v) {
    if (views[v].rows() != n) {
      throw std::invalid_argument("row count mismatch: view 0 has " + std::to_string(n) + " rows, view " +
                                  std::to_string(v) + " has " + std::to_string(views[v].rows()) + " rows");
    }
  }
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (views[v].cols() == 0) throw std::invalid_argument("view " + std::to_string(v) + " has no features");
    if (!views[v].allFinite()) throw std::invalid_argument("view " + std::to_string(v) + " has non-finite values");
  }
  if (labels) {
    if (static_cast<Eigen::Index>(labels->size()) != n) {
      throw std::invalid_argument("labels have " + std::to_string(labels->size()) + " rows, views have " +
                                  std::to_string(n));
    }
    for (std::size_t i = 0; i < labels->size(); ++i) {
      const int y = (*labels)[i];
      if (y < 0 || y >= num_classes) {
        throw std::invalid_argument("label " + std::to_string(y) + " at row " + std::to_string(i) +
                                    " outside [0, " + std::to_string(num_classes) + ")");
      }
    }
  }
}

MultiViewDataset MultiViewDataset::subset(const std::vector<Eigen::Index>& rows) const {
  MultiViewDataset out;
  out.name = name;
  out.num_classes = num_classes;
  for (const Matrix& v : views) {
    Matrix m(static_cast<Eigen::Index>(rows.size()), v.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = v.row(rows[i]);
    out.views.push_back(std::move(m));
  }
  if (labels) {
    std::vector<int> l;
    l.reserve(rows.size());
    for (Eigen::Index r : rows) l.push_back((*labels)[static_cast<std::size_t>(r)]);
    out.labels = std::move(l);
  }
  return out;
}

DataFormat parse_data_format(const std::string& name) {
  if (name == "csv") return DataFormat::kCsv;
  if (name == "dccb") return DataFormat::kDccb;
  throw std::invalid_argument("unknown data format '" + name + "' (expected csv or dccb)");
}

MultiViewDataset load_dataset(const std::filesystem::path& path, DataFormat format) {
  return format == DataFormat::kCsv ? load_csv(path) : load_dccb(path);
}

MultiViewDataset load_csv(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::invalid_argument("csv dataset directory not found: " + dir.string());
  }
  MultiViewDataset data;
  data.name = dir.filename().string();
  for (int v = 0;; ++v) {
    const auto file = dir / ("view" + std::to_string(v) + ".csv");
    if (!std::filesystem::exists(file)) break;
    data.views.push_back(read_csv_matrix(file));
  }
  if (data.views.empty()) throw std::invalid_argument("no view0.csv in " + dir.string());
  if (const auto file = dir / "labels.csv"; std::filesystem::exists(file)) {
    data.labels = read_labels(file);
    data.num_classes = infer_num_classes(*data.labels);
  }
  data.validate();
  return data;
}

MultiViewDataset load_dccb(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::invalid_argument("cannot open " + file.string());
  using detail::read_le;
  detail::expect_magic(is, "DCCB");
  const auto version = read_le<std::uint32_t>(is, "version");
  if (version != kDccbVersion) throw std::runtime_error("unsupported dccb version " + std::to_string(version));
  const auto num_views = read_le<std::uint32_t>(is, "V");
  const auto has_labels = read_le<std::uint8_t>(is, "has_labels");
  MultiViewDataset data;
  data.name = file.stem().string();
  for (std::uint32_t v = 0; v < num_views; ++v) {
    const auto n = read_le<std::uint32_t>(is, "n");
    const auto d = read_le<std::uint32_t>(is, "D_v");
    Matrix m(n, d);
    if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
      throw std::runtime_error("unexpected end of file in view " + std::to_string(v));
    }
    data.views.push_back(std::move(m));
  }
  if (has_labels) {
    const auto n = read_le<std::uint32_t>(is, "label count");
    std::vector<int> labels(n);
    for (auto& y : labels) y = static_cast<int>(read_le<std::uint32_t>(is, "label"));
    data.num_classes = infer_num_classes(labels);
    data.labels = std::move(labels);
  }
  data.validate();
  return data;
}

void save_csv(const MultiViewDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  char buf[64];
  for (std::size_t v = 0; v < data.views.size(); ++v) {
    const auto file = dir / ("view" + std::to_string(v) + ".csv");
    std::ofstream os(file);
    if (!os) throw std::runtime_error("cannot write " + file.string());
    const Matrix& m = data.views[v];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), m(r, c));
        if (c) os << ',';
        os.write(buf, ptr - buf);
      }
      os << '\n';
    }
  }
  if (data.labels) {
    std::ofstream os(dir / "labels.csv");
    if (!os) throw std::runtime_error("cannot write " + (dir / "labels.csv").string());
    for (int y : *data.labels) os << y << '\n';
  }
}

void save_dccb(const MultiViewDataset& data, const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  using detail::write_le;
  detail::write_magic(os, "DCCB");
  write_le<std::uint32_t>(os, kDccbVersion);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(data.views.size()));
  write_le<std::uint8_t>(os, data.labels ? 1 : 0);
  for (const Matrix& m : data.views) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (data.labels) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(data.labels->size()));
    for (int y : *data.labels) write_le<std::uint32_t>(os, static_cast<std::uint32_t>(y));
  }
  if (!os) throw std::runtime_error("failed writing " + file.string());
}

Normalization parse_normalization(const std::string& name) {
  if (name == "none") return Normalization::kNone;
  if (name == "minmax") return Normalization::kMinMax;
  if (name == "zscore") return Normalization::kZScore;
  throw std::invalid_argument("unknown normalization '" + name + "' (expected none, minmax or zscore)");
}

MultiViewDataset normalize_minmax(const MultiViewDataset& data) {
  return map_columns(data, [](auto col) {
    const double lo = col.minCoeff();
    const double range = col.maxCoeff() - lo;
    if (range > 0.0) {
      col = ((col.array() - lo) / range).matrix();
    } else {
      col.setZero();
    }
  });
}

MultiViewDataset normalize_zscore(const MultiViewDataset& data) {
  return map_columns(data, [](auto col) {
    const double mu = col.mean();
    const double sd = std::sqrt((col.array() - mu).square().mean());
    if (sd > 0.0) {
      col = ((col.array() - mu) / sd).matrix();
    } else {
      col.setZero();
    }
  });
}

MultiViewDataset normalize(const MultiViewDataset& data, Normalization mode) {
  switch (mode) {
    case Normalization::kMinMax: return normalize_minmax(data);
    case Normalization::kZScore: return normalize_zscore(data);
    case Normalization::kNone: break;
  }
  return data;
}

void SynthSpec::validate() const {
  if (n <= 0 || clusters <= 0 || views <= 0) throw std::invalid_argument("synth: n, K, V must be positive");
  if (clusters > n) throw std::invalid_argument("synth: K must not exceed n");
  if (d_shared <= 0 || d_private < 0 || view_dim <= 0) {
    throw std::invalid_argument("synth: dimensions must be positive (d_private may be 0)");
  }
  if (!(noise_sigma >= 0.0) || !(separation >= 0.0) || !(jitter >= 0.0)) {
    throw std::invalid_argument("synth: noise_sigma, separation and jitter must be non-negative");
  }
}

MultiViewDataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> label_dist(0, spec.clusters - 1);

  const double min_gap = std::max(spec.separation, 4.0 * spec.noise_sigma);
  Matrix means(spec.clusters, spec.d_shared);
  for (Eigen::Index k = 0; k < means.size(); ++k) means.data()[k] = normal(rng);
  if (spec.clusters > 1) {
    double closest = std::numeric_limits<double>::infinity();
    for (int a = 0; a < spec.clusters; ++a) {
      for (int b = a + 1; b < spec.clusters; ++b) closest = std::min(closest, (means.row(a) - means.row(b)).norm());
    }
    if (closest > 0.0) means *= min_gap / closest;
  }

  MultiViewDataset data;
  data.name = "synth";
  data.num_classes = spec.clusters;
  std::vector<int> labels(static_cast<std::size_t>(spec.n));
  Matrix shared(spec.n, spec.d_shared);
  const double jitter_sd = spec.jitter * spec.noise_sigma;
  for (int i = 0; i < spec.n; ++i) {
    labels[static_cast<std::size_t>(i)] = label_dist(rng);
    for (int d = 0; d < spec.d_shared; ++d) {
      shared(i, d) = means(labels[static_cast<std::size_t>(i)], d) + jitter_sd * normal(rng);
    }
  }

  const int latent = spec.d_shared + spec.d_private;
  for (int v = 0; v < spec.views; ++v) {
    Matrix mixing(latent, spec.view_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(latent));
    for (Eigen::Index k = 0; k < mixing.size(); ++k) mixing.data()[k] = scale * normal(rng);
    Matrix factors(spec.n, latent);
    factors.leftCols(spec.d_shared) = shared;
    for (int i = 0; i < spec.n; ++i) {
      for (int d = spec.d_shared; d < latent; ++d) factors(i, d) = normal(rng);
    }
    Matrix x = factors * mixing;
    if (spec.mixing == Mixing::kTanh) x = x.array().tanh().matrix();
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] += spec.noise_sigma * normal(rng);
    data.views.push_back(std::move(x));
  }
  data.labels = std::move(labels);
  data.validate();
  return data;
}

}  // namespace dccmvc
