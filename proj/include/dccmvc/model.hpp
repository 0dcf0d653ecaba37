#pragma once

#include "dccmvc/distributions.hpp"
#include "dccmvc/numerics.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace dccmvc {

// Fully connected layer y = x W + b with W stored in x fan_in x fan_out.
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(Eigen::Index fan_in, Eigen::Index fan_out);

  Eigen::Index fan_in() const { return weight.rows(); }
  Eigen::Index fan_out() const { return weight.cols(); }
  Var forward(Tape& tape, Var x);
};

enum class OutputActivation : std::uint8_t { kIdentity = 0, kSigmoid = 1 };

struct ModelConfig {
  // Encoder trunk widths after the input; the decoder mirrors them.
  std::vector<Eigen::Index> hidden = {500, 500, 500, 2000};
  Eigen::Index private_dim = 10;
  Eigen::Index clusters = 0;
  double tau = 0.5;
  OutputActivation output = OutputActivation::kSigmoid;

  void validate() const;
};

struct ViewNetwork {
  Eigen::Index input_dim = 0;
  std::vector<Linear> encoder;
  Linear mu_head;
  Linear log_var_head;
  Linear logits_head;
  std::vector<Linear> decoder;
};

struct ViewPosteriors {
  GaussianPosterior priv;
  CategoricalPosterior shared;
};

class DccmvcModel {
 public:
  DccmvcModel() = default;
  DccmvcModel(std::span<const Eigen::Index> view_dims, ModelConfig config);

  // He fan-in normal weights for ReLU-fed layers, fan-in scaling for the
  // linear heads and the output layer; zero biases.
  void init_parameters(std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t num_views() const { return views_.size(); }
  Eigen::Index clusters() const { return config_.clusters; }
  Eigen::Index private_dim() const { return config_.private_dim; }
  double tau() const { return config_.tau; }

  ViewNetwork& view(std::size_t v) { return views_.at(v); }
  const ViewNetwork& view(std::size_t v) const { return views_.at(v); }

  // Every trainable tensor in declaration order, with dotted names.
  std::vector<ParameterRef> parameters();
  void zero_grad();

  bool operator==(const DccmvcModel& other) const;

 private:
  ModelConfig config_;
  std::vector<ViewNetwork> views_;
};

ViewPosteriors encode(DccmvcModel& model, Tape& tape, std::size_t view, Var x);

// Product of per-view categoricals: logits add, softmax renormalizes.
CategoricalPosterior fuse_shared(std::span<const CategoricalPosterior> posteriors);

Var decode(DccmvcModel& model, Tape& tape, std::size_t view, Var z_private, Var z_shared);

// Binary checkpoint: "DCCM", u32 version, u32 K, u32 d_p, f64 tau, u32 V, u8 output
// activation, u32 hidden count + u32 widths, then per view u32 D_v and every
// parameter as (u32 rows, u32 cols, rows*cols little-endian f64) in declaration order.
void save_checkpoint(const DccmvcModel& model, const std::filesystem::path& path);
DccmvcModel load_checkpoint(const std::filesystem::path& path);

}  // namespace dccmvc
