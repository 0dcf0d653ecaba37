#pragma once

#include "dccmvc/data.hpp"
#include "dccmvc/losses.hpp"
#include "dccmvc/model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dccmvc {

enum class Stage { kPretrain, kTrain, kFinetune };
std::string_view stage_name(Stage stage);

struct TrainConfig {
  int pretrain_epochs = 100;
  int train_epochs = 100;
  int finetune_epochs = 50;
  int batch_size = 128;
  double learning_rate = 1e-4;
  // Fine-tuning reuses learning_rate unless this is set.
  std::optional<double> finetune_learning_rate;
  bool allow_partial_batch = true;
  std::uint64_t seed = 0;
  LossWeights weights;
  // model.clusters == 0 means "take K from the dataset labels".
  ModelConfig model;

  void validate() const;
};

struct TraceEntry {
  Stage stage = Stage::kPretrain;
  int epoch = 0;        // 1-based across all stages
  int stage_epoch = 0;  // 1-based within the stage
  LossReport report;
  double seconds = 0.0;

  // One line-delimited record; wall-clock time is left out so logs of
  // identical runs are byte-identical.
  std::string to_json() const;
};

struct TrainTrace {
  std::vector<TraceEntry> entries;
};

class NumericalFailure : public std::runtime_error {
 public:
  NumericalFailure(int epoch, int batch, std::string term);
  int epoch() const { return epoch_; }
  int batch() const { return batch_; }
  const std::string& term() const { return term_; }

 private:
  int epoch_;
  int batch_;
  std::string term_;
};

// Deterministic 64-bit stream key from (seed, a, b).
std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

// Row order of one epoch, derived from (seed, epoch index).
std::vector<Eigen::Index> epoch_order(Eigen::Index n, std::uint64_t seed, int epoch);

// Noise for batch `batch` of 0-based epoch `epoch`.
NoiseBundle batch_noise(std::uint64_t seed, int epoch, int batch, Eigen::Index rows, const DccmvcModel& model);

// One shuffled pass over `data`, one Adam step per batch. `epoch` is the
// 0-based global epoch index that keys the shuffle and the noise streams.
LossReport run_epoch(const MultiViewDataset& data, DccmvcModel& model, AdamState& optimizer, Stage stage,
                     const TrainConfig& config, int epoch);

// Resolves K and the view widths and returns a freshly initialized model.
DccmvcModel make_model(const MultiViewDataset& data, const TrainConfig& config);

struct TrainResult {
  DccmvcModel model;
  TrainTrace trace;
};

using EpochCallback = std::function<void(const TraceEntry&)>;

// Pretraining on the reconstruction objective, then dual-consistency training
// and fine-tuning on the full objective.
TrainResult train(const MultiViewDataset& data, const TrainConfig& config, const EpochCallback& on_epoch = {});
TrainTrace train(const MultiViewDataset& data, DccmvcModel& model, const TrainConfig& config,
                 const EpochCallback& on_epoch = {});

// Fresh Adam state at the configured learning rate.
AdamState initial_optimizer(const TrainConfig& config);

// Runs the stages from `from` onward with an existing optimizer. Epoch
// numbering (and with it the shuffle and noise streams) continues as if the
// earlier stages had just run, so pretraining once and resuming two copies
// matches two full runs.
TrainTrace resume(const MultiViewDataset& data, DccmvcModel& model, AdamState& optimizer, const TrainConfig& config,
                  Stage from, const EpochCallback& on_epoch = {});

}  // namespace dccmvc
