#include "dccmvc/cli.hpp"

#include "dccmvc/model.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <variant>

namespace dccmvc::cli {

namespace {

using Json = nlohmann::json;

std::string kebab(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

template <typename T>
T get_as(const Json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("config key '" + key + "' has a value of the wrong type: " + j.dump());
  }
}

std::string output_name(OutputActivation a) { return a == OutputActivation::kSigmoid ? "sigmoid" : "identity"; }

OutputActivation parse_output(const std::string& s) {
  if (s == "sigmoid") return OutputActivation::kSigmoid;
  if (s == "identity") return OutputActivation::kIdentity;
  throw ConfigError("config key 'output_activation' must be sigmoid or identity, got '" + s + "'");
}

std::string format_name(DataFormat f) { return f == DataFormat::kCsv ? "csv" : "dccb"; }
std::string normalization_name(Normalization n) {
  switch (n) {
    case Normalization::kMinMax: return "minmax";
    case Normalization::kZScore: return "zscore";
    case Normalization::kNone: break;
  }
  return "none";
}
std::string assign_name(AssignMode m) { return m == AssignMode::kKMeans ? "kmeans" : "argmax-shared"; }
std::string nmi_name(NmiNormalization n) { return n == NmiNormalization::kGeometric ? "geometric" : "arithmetic"; }

NmiNormalization parse_nmi(const std::string& s) {
  if (s == "geometric") return NmiNormalization::kGeometric;
  if (s == "arithmetic") return NmiNormalization::kArithmetic;
  throw std::invalid_argument("unknown NMI normalization '" + s + "' (expected geometric or arithmetic)");
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

// Typed CLI option whose value, when given, overrides the config file entry.
using OptionValue = std::variant<std::optional<int>, std::optional<double>, std::optional<std::uint64_t>,
                                 std::optional<std::string>, std::optional<bool>,
                                 std::optional<std::vector<long>>>;

struct ConfigKey {
  const char* name;
  int kind;  // index into OptionValue
  const char* help;
};

constexpr ConfigKey kConfigKeys[] = {
    {"pretrain_epochs", 0, "epochs of reconstruction pretraining"},
    {"train_epochs", 0, "epochs of dual-consistency training"},
    {"finetune_epochs", 0, "epochs of fine-tuning"},
    {"batch_size", 0, "mini-batch size"},
    {"private_dim", 0, "width of each view's private Gaussian code"},
    {"clusters", 0, "cluster count K (0: from labels)"},
    {"learning_rate", 1, "Adam learning rate"},
    {"finetune_learning_rate", 1, "learning rate for the fine-tuning stage"},
    {"alpha", 1, "weight of the autoencoder reconstruction loss"},
    {"beta", 1, "weight of the cross/within/shared-inference losses"},
    {"gamma", 1, "weight of the contrastive loss"},
    {"epsilon", 1, "within-view reconstruction balance"},
    {"omega", 1, "cross-view reconstruction balance"},
    {"eta", 1, "marginal exponent of the MI term"},
    {"entropy_weight", 1, "entropy coefficient of the contrastive loss"},
    {"tau", 1, "Gumbel-Softmax temperature"},
    {"seed", 2, "random seed"},
    {"data", 3, "dataset path (dccb file or csv directory)"},
    {"format", 3, "dataset format: dccb or csv"},
    {"normalize", 3, "preprocessing: minmax, zscore or none"},
    {"out", 3, "output directory"},
    {"assign", 3, "cluster assignment: kmeans or argmax-shared"},
    {"nmi_norm", 3, "NMI normalization: geometric or arithmetic"},
    {"output_activation", 3, "decoder output activation: sigmoid or identity"},
    {"dump_embedding", 4, "write embedding.tsv after training"},
    {"allow_partial_batch", 4, "keep the final partial batch of each epoch"},
    {"hidden", 5, "encoder hidden widths, e.g. 500,500,500,2000"},
};

struct DatasetArgs {
  std::string data;
  std::string format = "dccb";
  std::string normalize = "minmax";
};

void add_dataset_options(CLI::App* cmd, DatasetArgs& args) {
  cmd->add_option("--data", args.data, "dataset path (dccb file or csv directory)")->required();
  cmd->add_option("--format", args.format, "dataset format: dccb or csv");
  cmd->add_option("--normalize", args.normalize, "preprocessing: minmax, zscore or none");
}

MultiViewDataset load_prepared(const DatasetArgs& args) {
  if (!std::filesystem::exists(args.data)) throw ConfigError("dataset path not found: " + args.data);
  MultiViewDataset data;
  try {
    data = load_dataset(args.data, parse_data_format(args.format));
    return normalize(data, parse_normalization(args.normalize));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void check_compatible(const DccmvcModel& model, const MultiViewDataset& data) {
  if (model.num_views() != data.views.size()) {
    throw ConfigError("checkpoint has V=" + std::to_string(model.num_views()) + " views, dataset has V=" +
                      std::to_string(data.views.size()));
  }
  for (std::size_t v = 0; v < data.views.size(); ++v) {
    if (model.view(v).input_dim != data.views[v].cols()) {
      throw ConfigError("view " + std::to_string(v) + " width D_v mismatch: checkpoint expects " +
                        std::to_string(model.view(v).input_dim) + ", dataset has " +
                        std::to_string(data.views[v].cols()));
    }
  }
}

void write_embedding(std::ostream& os, DccmvcModel& model, const MultiViewDataset& data) {
  const Matrix rep = extract_representation(model, data);
  for (Eigen::Index i = 0; i < rep.rows(); ++i) {
    os << i << '\t' << (data.labels ? (*data.labels)[static_cast<std::size_t>(i)] : -1);
    for (Eigen::Index c = 0; c < rep.cols(); ++c) os << '\t' << format_double(rep(i, c));
    os << '\n';
  }
}

int cmd_synth(const SynthSpec& spec, const std::string& out_dir, std::ostream& out) {
  const std::filesystem::path dir(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw ConfigError("cannot create output directory " + out_dir);
  const MultiViewDataset data = synth_generate(spec);
  save_dccb(data, dir / "dataset.dccb");
  save_csv(data, dir);
  write_text(dir / "manifest.json", synth_manifest(spec).dump(2) + "\n");
  out << (dir / "dataset.dccb").string() << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  DatasetArgs args{cfg.data.string(), format_name(cfg.format), normalization_name(cfg.normalize)};
  const MultiViewDataset data = load_prepared(args);

  std::error_code ec;
  std::filesystem::create_directories(cfg.out, ec);
  if (ec || !std::filesystem::is_directory(cfg.out)) {
    throw ConfigError("cannot create output directory " + cfg.out.string());
  }
  write_text(cfg.out / "config.json", to_json(cfg).dump(2) + "\n");

  std::ofstream trace(cfg.out / "trace.log", std::ios::binary);
  if (!trace) throw ConfigError("cannot write " + (cfg.out / "trace.log").string());
  DccmvcModel model;
  try {
    model = make_model(data, cfg.train);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  train(data, model, cfg.train, [&trace](const TraceEntry& e) { trace << e.to_json() << '\n' << std::flush; });
  save_checkpoint(model, cfg.out / "checkpoint.dccm");

  if (data.labels) {
    const Partition pred = assign_clusters(model, data, cfg.assign, cfg.train.seed);
    const MetricReport report =
        evaluate(pred, Partition::from_labels(*data.labels), cfg.train.seed, cfg.nmi_norm);
    write_text(cfg.out / "metrics.json", report.to_json() + "\n");
    out << report.to_json() << '\n';
  }
  if (cfg.dump_embedding) {
    std::ofstream os(cfg.out / "embedding.tsv", std::ios::binary);
    write_embedding(os, model, data);
  }
  return kExitOk;
}

DccmvcModel load_model(const std::string& path) {
  try {
    return load_checkpoint(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

int cmd_eval(const std::string& checkpoint, const DatasetArgs& args, const std::string& assign,
             std::uint64_t seed, const std::string& nmi_norm, std::ostream& out) {
  DccmvcModel model = load_model(checkpoint);
  const MultiViewDataset data = load_prepared(args);
  check_compatible(model, data);
  if (!data.labels) throw ConfigError("eval needs ground-truth labels in the dataset");
  AssignMode mode;
  NmiNormalization norm;
  try {
    mode = parse_assign_mode(assign);
    norm = parse_nmi(nmi_norm);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const Partition pred = assign_clusters(model, data, mode, seed);
  out << evaluate(pred, Partition::from_labels(*data.labels), seed, norm).to_json() << '\n';
  return kExitOk;
}

int cmd_embed(const std::string& checkpoint, const DatasetArgs& args, const std::string& out_path,
              std::ostream& out) {
  DccmvcModel model = load_model(checkpoint);
  const MultiViewDataset data = load_prepared(args);
  check_compatible(model, data);
  if (out_path.empty() || out_path == "-") {
    write_embedding(out, model, data);
  } else {
    std::ofstream os(out_path, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + out_path);
    write_embedding(os, model, data);
  }
  return kExitOk;
}

}  // namespace

namespace {

const char* const kRunOnlyKeys[] = {"data", "format", "normalize", "out", "assign", "nmi_norm", "dump_embedding"};

RunConfig parse_config(const Json& j, bool run_keys) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!run_keys) {
    for (const char* key : kRunOnlyKeys) {
      if (j.contains(key)) throw ConfigError("config key '" + std::string(key) + "' is not a training setting");
    }
  }
  RunConfig c;
  TrainConfig& t = c.train;
  for (const auto& [key, value] : j.items()) {
    if (key == "pretrain_epochs") t.pretrain_epochs = get_as<int>(value, key);
    else if (key == "train_epochs") t.train_epochs = get_as<int>(value, key);
    else if (key == "finetune_epochs") t.finetune_epochs = get_as<int>(value, key);
    else if (key == "batch_size") t.batch_size = get_as<int>(value, key);
    else if (key == "private_dim") t.model.private_dim = get_as<int>(value, key);
    else if (key == "clusters") t.model.clusters = get_as<int>(value, key);
    else if (key == "learning_rate") t.learning_rate = get_as<double>(value, key);
    else if (key == "finetune_learning_rate") {
      if (!value.is_null()) t.finetune_learning_rate = get_as<double>(value, key);
    }
    else if (key == "alpha") t.weights.alpha = get_as<double>(value, key);
    else if (key == "beta") t.weights.beta = get_as<double>(value, key);
    else if (key == "gamma") t.weights.gamma = get_as<double>(value, key);
    else if (key == "epsilon") t.weights.epsilon = get_as<double>(value, key);
    else if (key == "omega") t.weights.omega = get_as<double>(value, key);
    else if (key == "eta") t.weights.eta = get_as<double>(value, key);
    else if (key == "entropy_weight") t.weights.entropy_weight = get_as<double>(value, key);
    else if (key == "tau") t.model.tau = get_as<double>(value, key);
    else if (key == "seed") t.seed = get_as<std::uint64_t>(value, key);
    else if (key == "data") c.data = get_as<std::string>(value, key);
    else if (key == "format") {
      try {
        c.format = parse_data_format(get_as<std::string>(value, key));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config key 'format': ") + e.what());
      }
    }
    else if (key == "normalize") {
      try {
        c.normalize = parse_normalization(get_as<std::string>(value, key));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config key 'normalize': ") + e.what());
      }
    }
    else if (key == "out") c.out = get_as<std::string>(value, key);
    else if (key == "assign") {
      try {
        c.assign = parse_assign_mode(get_as<std::string>(value, key));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config key 'assign': ") + e.what());
      }
    }
    else if (key == "nmi_norm") {
      try {
        c.nmi_norm = parse_nmi(get_as<std::string>(value, key));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config key 'nmi_norm': ") + e.what());
      }
    }
    else if (key == "output_activation") t.model.output = parse_output(get_as<std::string>(value, key));
    else if (key == "dump_embedding") c.dump_embedding = get_as<bool>(value, key);
    else if (key == "allow_partial_batch") t.allow_partial_batch = get_as<bool>(value, key);
    else if (key == "hidden") {
      auto widths = get_as<std::vector<long>>(value, key);
      t.model.hidden.assign(widths.begin(), widths.end());
    }
    else throw ConfigError("unknown config key '" + key + "'");
  }
  if (run_keys) {
    if (c.data.empty()) throw ConfigError("config key 'data' (dataset path) is required");
    if (!std::filesystem::exists(c.data)) throw ConfigError("config key 'data': path not found: " + c.data.string());
  }
  try {
    t.validate();
    if (t.model.clusters != 0) t.model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

}  // namespace

RunConfig parse_run_config(const Json& j) { return parse_config(j, true); }

TrainConfig parse_train_config(const Json& j) { return parse_config(j, false).train; }

nlohmann::ordered_json to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  nlohmann::ordered_json j;
  j["pretrain_epochs"] = t.pretrain_epochs;
  j["train_epochs"] = t.train_epochs;
  j["finetune_epochs"] = t.finetune_epochs;
  j["batch_size"] = t.batch_size;
  j["learning_rate"] = t.learning_rate;
  j["finetune_learning_rate"] =
      t.finetune_learning_rate ? nlohmann::ordered_json(*t.finetune_learning_rate) : nlohmann::ordered_json();
  j["allow_partial_batch"] = t.allow_partial_batch;
  j["seed"] = t.seed;
  j["alpha"] = t.weights.alpha;
  j["beta"] = t.weights.beta;
  j["gamma"] = t.weights.gamma;
  j["epsilon"] = t.weights.epsilon;
  j["omega"] = t.weights.omega;
  j["eta"] = t.weights.eta;
  j["entropy_weight"] = t.weights.entropy_weight;
  j["tau"] = t.model.tau;
  j["private_dim"] = t.model.private_dim;
  j["clusters"] = t.model.clusters;
  j["hidden"] = t.model.hidden;
  j["output_activation"] = output_name(t.model.output);
  j["data"] = c.data.string();
  j["format"] = format_name(c.format);
  j["normalize"] = normalization_name(c.normalize);
  j["out"] = c.out.string();
  j["assign"] = assign_name(c.assign);
  j["nmi_norm"] = nmi_name(c.nmi_norm);
  j["dump_embedding"] = c.dump_embedding;
  return j;
}

nlohmann::ordered_json synth_manifest(const SynthSpec& s) {
  nlohmann::ordered_json j;
  j["n"] = s.n;
  j["k"] = s.clusters;
  j["views"] = s.views;
  j["d_shared"] = s.d_shared;
  j["d_private"] = s.d_private;
  j["dim"] = s.view_dim;
  j["mixing"] = s.mixing == Mixing::kTanh ? "tanh" : "linear";
  j["noise_sigma"] = s.noise_sigma;
  j["separation"] = s.separation;
  j["jitter"] = s.jitter;
  j["seed"] = s.seed;
  return j;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Disentangled dual-consistency multi-view clustering"};
  app.require_subcommand(1);

  // synth
  SynthSpec spec;
  std::string mixing = "tanh";
  std::string synth_out = ".";
  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-view dataset");
  synth->add_option("--n", spec.n, "number of samples");
  synth->add_option("--k", spec.clusters, "number of classes");
  synth->add_option("--views", spec.views, "number of views");
  synth->add_option("--d-shared", spec.d_shared, "shared factor width");
  synth->add_option("--d-private", spec.d_private, "private factor width per view");
  synth->add_option("--dim", spec.view_dim, "observed width of every view");
  synth->add_option("--mixing", mixing, "linear or tanh")->check(CLI::IsMember({"linear", "tanh"}));
  synth->add_option("--noise-sigma", spec.noise_sigma, "observation noise standard deviation");
  synth->add_option("--separation", spec.separation, "minimum distance between class means");
  synth->add_option("--jitter", spec.jitter, "within-class shared jitter, in units of noise sigma");
  synth->add_option("--seed", spec.seed, "random seed");
  synth->add_option("--out", synth_out, "output directory");

  // train
  auto* train_cmd = app.add_subcommand("train", "run the three-stage training pipeline");
  std::string config_path;
  train_cmd->add_option("--config", config_path, "JSON config file (strict schema)");
  std::map<std::string, OptionValue> overrides;
  for (const ConfigKey& key : kConfigKeys) {
    const std::string flag = "--" + kebab(key.name);
    OptionValue& slot = overrides[key.name];
    switch (key.kind) {
      case 0: slot = std::optional<int>{}; train_cmd->add_option(flag, std::get<0>(slot), key.help); break;
      case 1: slot = std::optional<double>{}; train_cmd->add_option(flag, std::get<1>(slot), key.help); break;
      case 2: slot = std::optional<std::uint64_t>{}; train_cmd->add_option(flag, std::get<2>(slot), key.help); break;
      case 3: slot = std::optional<std::string>{}; train_cmd->add_option(flag, std::get<3>(slot), key.help); break;
      case 4: slot = std::optional<bool>{}; train_cmd->add_option(flag, std::get<4>(slot), key.help); break;
      case 5:
        slot = std::optional<std::vector<long>>{};
        train_cmd->add_option(flag, std::get<5>(slot), key.help)->delimiter(',');
        break;
    }
  }

  // eval / embed
  DatasetArgs eval_data, embed_data;
  std::string eval_ckpt, embed_ckpt, assign = "kmeans", nmi_norm = "geometric", embed_out;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "cluster a dataset with a trained checkpoint and report ACC/NMI/PUR");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint.dccm path")->required();
  add_dataset_options(eval, eval_data);
  eval->add_option("--assign", assign, "kmeans or argmax-shared");
  eval->add_option("--seed", eval_seed, "k-means seed");
  eval->add_option("--nmi-norm", nmi_norm, "geometric or arithmetic");
  auto* embed = app.add_subcommand("embed", "write per-sample representations as TSV");
  embed->add_option("--checkpoint", embed_ckpt, "checkpoint.dccm path")->required();
  add_dataset_options(embed, embed_data);
  embed->add_option("--out", embed_out, "output TSV path (default: stdout)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (synth->parsed()) {
      spec.mixing = mixing == "tanh" ? Mixing::kTanh : Mixing::kLinear;
      try {
        spec.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      return cmd_synth(spec, synth_out, out);
    }
    if (train_cmd->parsed()) {
      Json merged = Json::object();
      if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw ConfigError("cannot open config file " + config_path);
        try {
          merged = Json::parse(is);
        } catch (const Json::parse_error& e) {
          throw ConfigError("config file " + config_path + " is not valid JSON: " + e.what());
        }
        if (!merged.is_object()) throw ConfigError("config file must hold a JSON object");
      }
      for (const auto& [key, slot] : overrides) {
        std::visit([&merged, &key](const auto& opt) {
          if (opt) merged[key] = *opt;
        }, slot);
      }
      return cmd_train(parse_run_config(merged), out);
    }
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, assign, eval_seed, nmi_norm, out);
    if (embed->parsed()) return cmd_embed(embed_ckpt, embed_data, embed_out, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalFailure& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace dccmvc::cli
