#include "dccmvc/model.hpp"

#include "binary_io.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>

namespace dccmvc {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Net, typename Fn>
void for_each_parameter(Net& net, const std::string& prefix, Fn&& fn) {
  auto linear = [&](auto& layer, const std::string& name) {
    fn(prefix + name + ".weight", layer.weight);
    fn(prefix + name + ".bias", layer.bias);
  };
  for (std::size_t i = 0; i < net.encoder.size(); ++i) linear(net.encoder[i], "encoder." + std::to_string(i));
  linear(net.mu_head, "mu_head");
  linear(net.log_var_head, "log_var_head");
  linear(net.logits_head, "logits_head");
  for (std::size_t i = 0; i < net.decoder.size(); ++i) linear(net.decoder[i], "decoder." + std::to_string(i));
}

Var mlp(Tape& tape, std::vector<Linear>& layers, Var x, bool relu_last) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(tape, x);
    if (i + 1 < layers.size() || relu_last) x = relu(x);
  }
  return x;
}

}  // namespace

Linear::Linear(Eigen::Index fan_in, Eigen::Index fan_out)
    : weight(Tensor::zeros(fan_in, fan_out, true)), bias(Tensor::zeros(1, fan_out, true)) {}

Var Linear::forward(Tape& tape, Var x) {
  if (x.cols() != fan_in()) {
    throw std::invalid_argument("linear: input width " + std::to_string(x.cols()) +
                                " but layer expects " + std::to_string(fan_in()));
  }
  return add(matmul(x, tape.leaf(weight)), tape.leaf(bias));
}

void ModelConfig::validate() const {
  if (hidden.empty()) throw std::invalid_argument("model: at least one hidden layer is required");
  for (Eigen::Index w : hidden) {
    if (w <= 0) throw std::invalid_argument("model: hidden widths must be positive");
  }
  if (private_dim <= 0) throw std::invalid_argument("model: private_dim must be positive");
  if (clusters < 2) throw std::invalid_argument("model: clusters must be >= 2");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("model: tau must be positive");
}

DccmvcModel::DccmvcModel(std::span<const Eigen::Index> view_dims, ModelConfig config)
    : config_(std::move(config)) {
  config_.validate();
  if (view_dims.empty()) throw std::invalid_argument("model: at least one view is required");
  const Eigen::Index trunk = config_.hidden.back();
  for (Eigen::Index dim : view_dims) {
    if (dim <= 0) throw std::invalid_argument("model: view widths must be positive");
    ViewNetwork net;
    net.input_dim = dim;
    Eigen::Index prev = dim;
    for (Eigen::Index w : config_.hidden) {
      net.encoder.emplace_back(prev, w);
      prev = w;
    }
    net.mu_head = Linear(trunk, config_.private_dim);
    net.log_var_head = Linear(trunk, config_.private_dim);
    net.logits_head = Linear(trunk, config_.clusters);
    prev = config_.private_dim + config_.clusters;
    for (auto it = config_.hidden.rbegin(); it != config_.hidden.rend(); ++it) {
      net.decoder.emplace_back(prev, *it);
      prev = *it;
    }
    net.decoder.emplace_back(prev, dim);
    views_.push_back(std::move(net));
  }
}

void DccmvcModel::init_parameters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto fill = [&rng](Linear& layer, double gain) {
    std::normal_distribution<double> normal(0.0, std::sqrt(gain / static_cast<double>(layer.fan_in())));
    Matrix& w = layer.weight.mutable_value();
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = normal(rng);
    layer.bias.mutable_value().setZero();
  };
  for (ViewNetwork& net : views_) {
    for (Linear& l : net.encoder) fill(l, 2.0);
    fill(net.mu_head, 1.0);
    fill(net.log_var_head, 1.0);
    fill(net.logits_head, 1.0);
    for (std::size_t i = 0; i < net.decoder.size(); ++i) {
      fill(net.decoder[i], i + 1 < net.decoder.size() ? 2.0 : 1.0);
    }
  }
}

std::vector<ParameterRef> DccmvcModel::parameters() {
  std::vector<ParameterRef> out;
  for (std::size_t v = 0; v < views_.size(); ++v) {
    for_each_parameter(views_[v], "view" + std::to_string(v) + ".",
                       [&out](std::string name, Tensor& t) { out.push_back({std::move(name), &t}); });
  }
  return out;
}

void DccmvcModel::zero_grad() {
  for (ParameterRef& p : parameters()) p.tensor->zero_grad();
}

bool DccmvcModel::operator==(const DccmvcModel& other) const {
  if (config_.hidden != other.config_.hidden || config_.private_dim != other.config_.private_dim ||
      config_.clusters != other.config_.clusters || config_.tau != other.config_.tau ||
      config_.output != other.config_.output || views_.size() != other.views_.size()) {
    return false;
  }
  for (std::size_t v = 0; v < views_.size(); ++v) {
    std::vector<const Matrix*> a, b;
    for_each_parameter(views_[v], "", [&a](const std::string&, const Tensor& t) { a.push_back(&t.value()); });
    for_each_parameter(other.views_[v], "", [&b](const std::string&, const Tensor& t) { b.push_back(&t.value()); });
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols() || *a[i] != *b[i]) return false;
    }
  }
  return true;
}

ViewPosteriors encode(DccmvcModel& model, Tape& tape, std::size_t view, Var x) {
  ViewNetwork& net = model.view(view);
  if (x.cols() != net.input_dim) {
    throw std::invalid_argument("encode: view " + std::to_string(view) + " expects width " +
                                std::to_string(net.input_dim) + ", got " + std::to_string(x.cols()));
  }
  Var h = mlp(tape, net.encoder, x, /*relu_last=*/true);
  return ViewPosteriors{
      GaussianPosterior{net.mu_head.forward(tape, h), net.log_var_head.forward(tape, h)},
      CategoricalPosterior{net.logits_head.forward(tape, h), model.tau()}};
}

CategoricalPosterior fuse_shared(std::span<const CategoricalPosterior> posteriors) {
  if (posteriors.empty()) throw std::invalid_argument("fuse_shared: no posteriors");
  Var logits = posteriors.front().logits;
  for (std::size_t i = 1; i < posteriors.size(); ++i) {
    const Var& next = posteriors[i].logits;
    if (next.cols() != logits.cols() || next.rows() != logits.rows()) {
      throw std::invalid_argument("fuse_shared: posterior " + std::to_string(i) + " has shape " +
                                  shape_str(next.value()) + ", expected " + shape_str(logits.value()));
    }
    logits = add(logits, next);
  }
  return CategoricalPosterior{logits, posteriors.front().tau};
}

Var decode(DccmvcModel& model, Tape& tape, std::size_t view, Var z_private, Var z_shared) {
  if (z_private.cols() != model.private_dim() || z_shared.cols() != model.clusters() ||
      z_private.rows() != z_shared.rows()) {
    throw std::invalid_argument("decode: codes " + shape_str(z_private.value()) + " and " +
                                shape_str(z_shared.value()) + " do not match d_p=" +
                                std::to_string(model.private_dim()) +
                                ", K=" + std::to_string(model.clusters()));
  }
  ViewNetwork& net = model.view(view);
  const Var codes[] = {z_private, z_shared};
  Var out = mlp(tape, net.decoder, concat_cols(codes), /*relu_last=*/false);
  return model.config().output == OutputActivation::kSigmoid ? sigmoid(out) : out;
}

void save_checkpoint(const DccmvcModel& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  using detail::write_le;
  const ModelConfig& c = model.config();
  detail::write_magic(os, "DCCM");
  write_le<std::uint32_t>(os, kCheckpointVersion);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.clusters));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.private_dim));
  write_le<double>(os, c.tau);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(model.num_views()));
  write_le<std::uint8_t>(os, static_cast<std::uint8_t>(c.output));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.hidden.size()));
  for (Eigen::Index w : c.hidden) write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w));
  for (std::size_t v = 0; v < model.num_views(); ++v) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(model.view(v).input_dim));
    for_each_parameter(model.view(v), "", [&os](const std::string&, const Tensor& t) {
      write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rows()));
      write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.cols()));
      os.write(reinterpret_cast<const char*>(t.value().data()),
               static_cast<std::streamsize>(t.value().size() * sizeof(double)));
    });
  }
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

DccmvcModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  using detail::read_le;
  detail::expect_magic(is, "DCCM");
  const auto version = read_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  c.clusters = read_le<std::uint32_t>(is, "K");
  c.private_dim = read_le<std::uint32_t>(is, "d_p");
  c.tau = read_le<double>(is, "tau");
  const auto num_views = read_le<std::uint32_t>(is, "V");
  const auto output = read_le<std::uint8_t>(is, "output activation");
  if (output > 1) throw std::runtime_error("bad output activation tag " + std::to_string(output));
  c.output = static_cast<OutputActivation>(output);
  c.hidden.resize(read_le<std::uint32_t>(is, "hidden count"));
  for (Eigen::Index& w : c.hidden) w = read_le<std::uint32_t>(is, "hidden width");

  // Views are decoded one at a time because each carries its own input width.
  std::vector<Eigen::Index> dims;
  std::vector<std::vector<Matrix>> payloads;
  for (std::uint32_t v = 0; v < num_views; ++v) {
    dims.push_back(read_le<std::uint32_t>(is, "view width"));
    DccmvcModel shape_probe(std::span<const Eigen::Index>(&dims.back(), 1), c);
    std::vector<Matrix> tensors;
    for_each_parameter(shape_probe.view(0), "", [&](const std::string& name, const Tensor& t) {
      const auto rows = read_le<std::uint32_t>(is, "rows");
      const auto cols = read_le<std::uint32_t>(is, "cols");
      if (rows != t.rows() || cols != t.cols()) {
        throw std::runtime_error("checkpoint tensor view" + std::to_string(v) + "." + name + " has shape [" +
                                 std::to_string(rows) + "x" + std::to_string(cols) + "], expected " +
                                 shape_str(t.value()));
      }
      Matrix m(rows, cols);
      if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
        throw std::runtime_error("unexpected end of file in tensor " + name);
      }
      tensors.push_back(std::move(m));
    });
    payloads.push_back(std::move(tensors));
  }
  DccmvcModel model(dims, c);
  for (std::size_t v = 0; v < dims.size(); ++v) {
    std::size_t i = 0;
    for_each_parameter(model.view(v), "",
                       [&](const std::string&, Tensor& t) { t.mutable_value() = payloads[v][i++]; });
  }
  return model;
}

}  // namespace dccmvc
