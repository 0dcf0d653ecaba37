#include "dccmvc/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace dccmvc {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t kNoiseDomain = 0x6e6f697365ULL;

void check_finite(const LossReport& r, int epoch, int batch) {
  const std::pair<const char*, double> terms[] = {
      {"rec", r.rec},         {"within", r.within},         {"cross", r.cross},
      {"shared_inference", r.shared_inference}, {"contrastive", r.contrastive}, {"total", r.total}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) throw NumericalFailure(epoch, batch, name);
  }
}

void accumulate(LossReport& acc, const LossReport& r, double w) {
  acc.rec += w * r.rec;
  acc.within += w * r.within;
  acc.cross += w * r.cross;
  acc.shared_inference += w * r.shared_inference;
  acc.contrastive += w * r.contrastive;
  acc.total += w * r.total;
}

}  // namespace

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::kPretrain: return "pretrain";
    case Stage::kTrain: return "train";
    case Stage::kFinetune: return "finetune";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  if (pretrain_epochs < 0 || train_epochs < 0 || finetune_epochs < 0) {
    throw std::invalid_argument("epoch counts must be non-negative");
  }
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be finite and non-negative");
  }
  if (finetune_learning_rate && (!(*finetune_learning_rate >= 0.0) || !std::isfinite(*finetune_learning_rate))) {
    throw std::invalid_argument("finetune_learning_rate must be finite and non-negative");
  }
  weights.validate();
}

std::string TraceEntry::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["stage"] = stage_name(stage);
  j["stage_epoch"] = stage_epoch;
  j["rec"] = report.rec;
  j["within"] = report.within;
  j["cross"] = report.cross;
  j["shared_inference"] = report.shared_inference;
  j["contrastive"] = report.contrastive;
  j["total"] = report.total;
  return j.dump();
}

NumericalFailure::NumericalFailure(int epoch, int batch, std::string term)
    : std::runtime_error("non-finite loss term '" + term + "' at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(batch)),
      epoch_(epoch),
      batch_(batch),
      term_(std::move(term)) {}

std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b);
}

std::vector<Eigen::Index> epoch_order(Eigen::Index n, std::uint64_t seed, int epoch) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(stream_key(seed, static_cast<std::uint64_t>(epoch), 0));
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

NoiseBundle batch_noise(std::uint64_t seed, int epoch, int batch, Eigen::Index rows, const DccmvcModel& model) {
  std::mt19937_64 rng(stream_key(seed ^ kNoiseDomain, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(batch)));
  return NoiseBundle::draw(rng, rows, model.num_views(), model.private_dim(), model.clusters());
}

LossReport run_epoch(const MultiViewDataset& data, DccmvcModel& model, AdamState& optimizer, Stage stage,
                     const TrainConfig& config, int epoch) {
  const Eigen::Index n = data.num_samples();
  const auto order = epoch_order(n, config.seed, epoch);
  const Eigen::Index batch = config.batch_size;
  Eigen::Index end = n;
  if (!config.allow_partial_batch) end = (n / batch) * batch;

  auto params = model.parameters();
  LossReport mean;
  double seen = 0.0;
  int batch_index = 0;
  for (Eigen::Index start = 0; start < end; start += batch, ++batch_index) {
    const Eigen::Index rows = std::min(batch, end - start);
    Tape tape;
    std::vector<Var> views;
    for (const Matrix& view : data.views) {
      Matrix x(rows, view.cols());
      for (Eigen::Index r = 0; r < rows; ++r) x.row(r) = view.row(order[static_cast<std::size_t>(start + r)]);
      views.push_back(tape.constant(std::move(x)));
    }

    LossTerms terms;
    if (stage == Stage::kPretrain) {
      terms = loss_pretrain(model, tape, views, config.weights);
    } else {
      terms = loss_total(model, tape, views, config.weights, batch_noise(config.seed, epoch, batch_index, rows, model));
    }
    check_finite(terms.report, epoch + 1, batch_index);

    model.zero_grad();
    tape.backward(terms.total);
    optimizer.update(params);

    accumulate(mean, terms.report, static_cast<double>(rows));
    seen += static_cast<double>(rows);
  }
  if (seen > 0.0) {
    LossReport scaled;
    accumulate(scaled, mean, 1.0 / seen);
    mean = scaled;
  }
  return mean;
}

DccmvcModel make_model(const MultiViewDataset& data, const TrainConfig& config) {
  data.validate();
  ModelConfig mc = config.model;
  if (mc.clusters == 0) {
    if (!data.labels) throw std::invalid_argument("cluster count K is required for unlabeled data");
    mc.clusters = data.num_classes;
  }
  const auto dims = data.view_dims();
  DccmvcModel model(dims, mc);
  model.init_parameters(config.seed);
  return model;
}

TrainTrace resume(const MultiViewDataset& data, DccmvcModel& model, AdamState& optimizer, const TrainConfig& config,
                  Stage from, const EpochCallback& on_epoch) {
  config.validate();
  data.validate();
  if (data.views.size() != model.num_views()) {
    throw std::invalid_argument("dataset has " + std::to_string(data.views.size()) + " views, model has " +
                                std::to_string(model.num_views()));
  }
  TrainTrace trace;
  int epoch = 0;
  const std::pair<Stage, int> stages[] = {{Stage::kPretrain, config.pretrain_epochs},
                                          {Stage::kTrain, config.train_epochs},
                                          {Stage::kFinetune, config.finetune_epochs}};
  for (const auto& [stage, count] : stages) {
    if (stage < from) {
      epoch += count;
      continue;
    }
    if (count == 0) continue;
    if (stage == Stage::kFinetune && config.finetune_learning_rate) {
      optimizer.set_learning_rate(*config.finetune_learning_rate);
    }
    for (int e = 0; e < count; ++e, ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      TraceEntry entry;
      entry.stage = stage;
      entry.epoch = epoch + 1;
      entry.stage_epoch = e + 1;
      entry.report = run_epoch(data, model, optimizer, stage, config, epoch);
      entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      trace.entries.push_back(entry);
      if (on_epoch) on_epoch(entry);
    }
  }
  return trace;
}

AdamState initial_optimizer(const TrainConfig& config) {
  AdamOptions opts;
  opts.learning_rate = config.learning_rate;
  return AdamState(opts);
}

TrainTrace train(const MultiViewDataset& data, DccmvcModel& model, const TrainConfig& config,
                 const EpochCallback& on_epoch) {
  config.validate();
  AdamState optimizer = initial_optimizer(config);
  return resume(data, model, optimizer, config, Stage::kPretrain, on_epoch);
}

TrainResult train(const MultiViewDataset& data, const TrainConfig& config, const EpochCallback& on_epoch) {
  TrainResult result{make_model(data, config), {}};
  result.trace = train(data, result.model, config, on_epoch);
  return result;
}

}  // namespace dccmvc
