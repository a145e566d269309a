#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>

#include <json.hpp>

#include "endofinder/binary_io.hpp"
#include "endofinder/classifier.hpp"
#include "endofinder/encoder.hpp"
#include "endofinder/hash_index.hpp"
#include "endofinder/synth.hpp"

namespace endofinder {

struct EvalConfig {
  int reid_train_instances = 200;
  int reid_test_instances = 100;
  int classify_samples = 150;
  int folds = 5;
  int positive_class = 2;
};

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  int threads = 8;
};

/// Everything that determines a run. Serialises to a JSON document with one
/// object per section plus the top-level seed.
struct PipelineConfig {
  std::uint64_t seed = 0;
  SynthSpec synth;
  MaskingConfig masking;
  LossConfig loss;
  TrainConfig train;  // train.loss / train.masking / train.seed are filled from the sections above
  BallTreeConfig hash;
  KnnConfig knn;
  EvalConfig eval;
  ServeConfig serve;

  /// Training config with the shared sections and seed folded in.
  TrainConfig training() const {
    TrainConfig t = train;
    t.loss = loss;
    t.masking = masking;
    t.seed = mix_seed(seed, 0x7a41);
    t.shape.patch_size = synth.patch_size;
    return t;
  }
  SynthSpec synth_spec() const {
    SynthSpec s = synth;
    s.seed = mix_seed(seed, 0x5e7d);
    return s;
  }
  BallTreeConfig index_config() const {
    BallTreeConfig b = hash;
    b.seed = mix_seed(seed, 0xba11);
    return b;
  }
};

namespace detail {

class SectionReader {
 public:
  SectionReader(const nlohmann::json& root, const std::string& name) : name_(name) {
    if (!root.contains(name)) return;
    sec_ = &root.at(name);
    ENDF_THROW_IF_NOT(sec_->is_object(), Errc::BadConfig, "config section '" + name + "' must be an object");
  }

  template <typename T>
  SectionReader& field(const std::string& key, T& out) {
    known_.insert(key);
    if (!sec_ || !sec_->contains(key)) return *this;
    try {
      out = sec_->at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(Errc::BadConfig, "config " + name_ + "." + key + " has the wrong type");
    }
    return *this;
  }

  void finish() const {
    if (!sec_) return;
    for (const auto& [k, v] : sec_->items())
      ENDF_THROW_IF_NOT(known_.count(k), Errc::BadConfig, "unknown config key " + name_ + "." + k);
  }

 private:
  std::string name_;
  const nlohmann::json* sec_ = nullptr;
  std::set<std::string> known_;
};

}  // namespace detail

inline void validate(const PipelineConfig& c) {
  try {
    validate(c.synth);
  } catch (const Error& e) {
    throw Error(Errc::BadConfig, std::string("synth: ") + e.what());
  }
  validate(c.masking);
  validate(c.training());
  validate(c.knn);
  ENDF_THROW_IF_NOT(c.train.shape.dim >= 1 && c.train.shape.hidden >= 1, Errc::BadConfig, "train.hidden and train.dim must be >= 1");
  ENDF_THROW_IF_NOT(c.hash.leaf_capacity >= 1 && c.hash.pole_sample >= 2, Errc::BadConfig,
                    "hash.leaf_capacity >= 1 and hash.pole_sample >= 2 required");
  ENDF_THROW_IF_NOT(c.eval.reid_train_instances >= 2 && c.eval.reid_test_instances >= 1, Errc::BadConfig,
                    "eval re-identification sizes too small");
  ENDF_THROW_IF_NOT(c.eval.folds >= 2 && c.eval.classify_samples >= c.eval.folds, Errc::BadConfig,
                    "eval.folds must be >= 2 and <= eval.classify_samples");
  ENDF_THROW_IF_NOT(c.serve.port >= 0 && c.serve.port <= 65535, Errc::BadConfig, "serve.port out of range");
  ENDF_THROW_IF_NOT(c.serve.threads >= 1, Errc::BadConfig, "serve.threads must be >= 1");
}

inline nlohmann::json to_json(const PipelineConfig& c) {
  const auto& t = c.train;
  return {
      {"seed", c.seed},
      {"synth",
       {{"image_size", c.synth.image_size},
        {"patch_size", c.synth.patch_size},
        {"num_instances", c.synth.num_instances},
        {"views_per_instance", c.synth.views_per_instance},
        {"num_classes", c.synth.num_classes},
        {"min_mask_fraction", c.synth.min_mask_fraction},
        {"max_mask_fraction", c.synth.max_mask_fraction}}},
      {"masking",
       {{"ratio", c.masking.ratio},
        {"fg_threshold", c.masking.fg_threshold},
        {"fg_slope", c.masking.fg_slope},
        {"fg_rate_floor", c.masking.fg_rate_floor}}},
      {"loss",
       {{"temperature", c.loss.temperature},
        {"entropy_weight", c.loss.entropy_weight},
        {"recon_weight", c.loss.recon_weight},
        {"entropy_floor", c.loss.entropy_floor},
        {"entropy_over_all_views", c.loss.entropy_over_all_views}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch", t.batch},
        {"learning_rate", t.learning_rate},
        {"optimizer", t.optimizer == Optimizer::Adam ? "adam" : "momentum"},
        {"momentum", t.momentum},
        {"beta2", t.beta2},
        {"adam_eps", t.adam_eps},
        {"cosine_decay", t.cosine_decay},
        {"hidden", t.shape.hidden},
        {"dim", t.shape.dim}}},
      {"hash", {{"leaf_capacity", c.hash.leaf_capacity}, {"pole_sample", c.hash.pole_sample}}},
      {"knn", {{"k", c.knn.k}, {"metric", metric_name(c.knn.metric)}}},
      {"eval",
       {{"reid_train_instances", c.eval.reid_train_instances},
        {"reid_test_instances", c.eval.reid_test_instances},
        {"classify_samples", c.eval.classify_samples},
        {"folds", c.eval.folds},
        {"positive_class", c.eval.positive_class}}},
      {"serve", {{"host", c.serve.host}, {"port", c.serve.port}, {"threads", c.serve.threads}}},
  };
}

/// Parses and validates; missing keys keep their defaults, unknown keys are
/// rejected with BadConfig.
inline PipelineConfig config_from_json(const nlohmann::json& j) {
  ENDF_THROW_IF_NOT(j.is_object(), Errc::BadConfig, "config root must be a JSON object");
  static const std::set<std::string> sections = {"seed", "synth", "masking", "loss", "train",
                                                 "hash", "knn",   "eval",    "serve"};
  for (const auto& [k, v] : j.items())
    ENDF_THROW_IF_NOT(sections.count(k), Errc::BadConfig, "unknown config key '" + k + "'");
  PipelineConfig c;
  if (j.contains("seed")) {
    const auto& s = j.at("seed");
    ENDF_THROW_IF_NOT(s.is_number_unsigned() || (s.is_number_integer() && s.get<std::int64_t>() >= 0), Errc::BadConfig,
                      "seed must be a non-negative integer");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  detail::SectionReader(j, "synth")
      .field("image_size", c.synth.image_size)
      .field("patch_size", c.synth.patch_size)
      .field("num_instances", c.synth.num_instances)
      .field("views_per_instance", c.synth.views_per_instance)
      .field("num_classes", c.synth.num_classes)
      .field("min_mask_fraction", c.synth.min_mask_fraction)
      .field("max_mask_fraction", c.synth.max_mask_fraction)
      .finish();
  detail::SectionReader(j, "masking")
      .field("ratio", c.masking.ratio)
      .field("fg_threshold", c.masking.fg_threshold)
      .field("fg_slope", c.masking.fg_slope)
      .field("fg_rate_floor", c.masking.fg_rate_floor)
      .finish();
  detail::SectionReader(j, "loss")
      .field("temperature", c.loss.temperature)
      .field("entropy_weight", c.loss.entropy_weight)
      .field("recon_weight", c.loss.recon_weight)
      .field("entropy_floor", c.loss.entropy_floor)
      .field("entropy_over_all_views", c.loss.entropy_over_all_views)
      .finish();
  std::string optimizer = c.train.optimizer == Optimizer::Adam ? "adam" : "momentum";
  detail::SectionReader(j, "train")
      .field("epochs", c.train.epochs)
      .field("batch", c.train.batch)
      .field("learning_rate", c.train.learning_rate)
      .field("optimizer", optimizer)
      .field("momentum", c.train.momentum)
      .field("beta2", c.train.beta2)
      .field("adam_eps", c.train.adam_eps)
      .field("cosine_decay", c.train.cosine_decay)
      .field("hidden", c.train.shape.hidden)
      .field("dim", c.train.shape.dim)
      .finish();
  if (optimizer == "adam")
    c.train.optimizer = Optimizer::Adam;
  else if (optimizer == "momentum")
    c.train.optimizer = Optimizer::Momentum;
  else
    throw Error(Errc::BadConfig, "train.optimizer must be 'adam' or 'momentum'");
  detail::SectionReader(j, "hash")
      .field("leaf_capacity", c.hash.leaf_capacity)
      .field("pole_sample", c.hash.pole_sample)
      .finish();
  std::string metric = metric_name(c.knn.metric);
  detail::SectionReader(j, "knn").field("k", c.knn.k).field("metric", metric).finish();
  c.knn.metric = parse_metric(metric);
  detail::SectionReader(j, "eval")
      .field("reid_train_instances", c.eval.reid_train_instances)
      .field("reid_test_instances", c.eval.reid_test_instances)
      .field("classify_samples", c.eval.classify_samples)
      .field("folds", c.eval.folds)
      .field("positive_class", c.eval.positive_class)
      .finish();
  detail::SectionReader(j, "serve")
      .field("host", c.serve.host)
      .field("port", c.serve.port)
      .field("threads", c.serve.threads)
      .finish();
  validate(c);
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::BadConfig, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace endofinder
