#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "augment.hpp"
#include "data.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "trainer.hpp"

namespace tscn {

struct Cifar10Source {
  std::filesystem::path dir;
  std::size_t records_per_file = kCifarRecordsPerFile;
};
struct Cifar100Source {
  std::filesystem::path dir;
  std::size_t records_per_file = kCifarRecordsPerFile;
};
struct SyntheticSource {
  SynthConfig config;
  std::uint64_t seed = 0;
};
using DatasetSource = std::variant<Cifar10Source, Cifar100Source, SyntheticSource>;

inline LabeledDataset load_dataset(const DatasetSource& src) {
  if (auto* c = std::get_if<Cifar10Source>(&src)) return load_cifar10(c->dir, c->records_per_file);
  if (auto* c = std::get_if<Cifar100Source>(&src)) return load_cifar100(c->dir, c->records_per_file);
  const auto& s = std::get<SyntheticSource>(src);
  return generate_synthetic(s.config, s.seed);
}

struct EvalOptions {
  bool enabled = true;
  std::size_t knn_k = 15;
  bool knn_sweep = false;  // k = 1..30
  ProbeOptions probe{};
  std::size_t loss_batch_size = 128;
  bool coarse_labels = false;  // CIFAR-100: score against the 20 superclasses
};

struct RunConfig {
  DatasetSource dataset = SyntheticSource{};
  ProtocolConfig protocol = ProtocolConfig::desk_default();
  AugmentPolicy augment{};
  EvalOptions eval{};
  std::filesystem::path output_dir;
  bool train_on_test = true;  // train on every image (train + test split)
  unsigned threads = 1;
};

// ---------------------------------------------------------------------------
// Parsing
//
// The run configuration is a JSON document. Every object rejects unknown keys
// so that a misspelled hyperparameter fails loudly. Documented schema:
//
// {
//   "output_dir": "runs/demo",                      (required)
//   "seed": 1,
//   "threads": 1,
//   "train_split": "all" | "train",
//   "batch_size": 128,
//   "momentum": 0.9,
//   "dataset": {"synthetic": {"classes", "per_class", "side", "noise",
//                             "jitter", "test_fraction", "seed"}}
//            | {"cifar10": {"dir", "records_per_file"}}
//            | {"cifar100": {"dir", "records_per_file"}},
//   "stages": {"pretrain" | "readout" | "finetune": {
//       "epochs", "peak_lr", "warmup_epochs", "anneal",
//       "readout_dim": <int> | "keep",
//       "kernel": {"kind": "cauchy" | "cosine" | "gaussian", "tau"}}},
//   "augment": {"crop_scale": [lo, hi], "crop_aspect": [lo, hi], "flip_p",
//               "jitter": [brightness, contrast, saturation, hue],
//               "jitter_p", "grayscale_p"},
//   "eval": {"enabled", "knn_k", "knn_sweep", "probe_iterations",
//            "probe_step", "loss_batch_size", "coarse_labels"}
// }
// ---------------------------------------------------------------------------

namespace detail {

using json = nlohmann::json;

inline void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; }))
      throw ConfigError("unknown key '" + (path.empty() ? it.key() : path + "." + it.key()) + "'");
}

template <typename V>
V get_or(const json& obj, const std::string& path, const char* key, V fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError("key '" + (path.empty() ? std::string(key) : path + "." + key) + "' has the wrong type");
  }
}

inline Range get_range(const json& obj, const std::string& path, const char* key, Range fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ConfigError("key '" + path + "." + key + "' must be a [lo, hi] pair");
  return {v[0].get<double>(), v[1].get<double>()};
}

inline void parse_stage(const json& j, const std::string& path, StageConfig& st) {
  check_keys(j, path, {"epochs", "peak_lr", "warmup_epochs", "anneal", "readout_dim", "kernel"});
  st.epochs = get_or<std::size_t>(j, path, "epochs", st.epochs);
  st.peak_lr = get_or<double>(j, path, "peak_lr", st.peak_lr);
  st.warmup_epochs = get_or<std::size_t>(j, path, "warmup_epochs", std::min(st.warmup_epochs, st.epochs));
  st.anneal = get_or<bool>(j, path, "anneal", st.anneal);
  if (j.contains("readout_dim")) {
    const auto& r = j.at("readout_dim");
    if (r.is_string() && r.get<std::string>() == "keep") st.readout_dim.reset();
    else if (r.is_number_unsigned()) st.readout_dim = r.get<std::size_t>();
    else throw ConfigError("key '" + path + ".readout_dim' must be a positive integer or \"keep\"");
  }
  if (j.contains("kernel")) {
    const auto& k = j.at("kernel");
    const std::string kp = path + ".kernel";
    check_keys(k, kp, {"kind", "tau"});
    try {
      st.kernel.kind = kernel_kind_from_string(get_or<std::string>(k, kp, "kind", to_string(st.kernel.kind)));
    } catch (const ValidationError& e) {
      throw ConfigError(kp + ".kind: " + e.what());
    }
    st.kernel.tau = get_or<double>(k, kp, "tau", st.kernel.kind == KernelKind::Cauchy ? 0.0 : 0.5);
  }
}

inline std::size_t line_of_offset(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

} // namespace detail

/// Parses a run configuration document. Errors carry the line number (syntax
/// errors) or the dotted key path (schema errors).
inline RunConfig parse_run_config(const std::string& text) {
  using detail::get_or;
  using detail::json;
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("syntax error at line " + std::to_string(detail::line_of_offset(text, e.byte)) + ": " + e.what());
  }
  detail::check_keys(root, "", {"output_dir", "seed", "threads", "train_split", "batch_size", "momentum", "dataset",
                                "stages", "augment", "eval"});
  RunConfig cfg;
  if (!root.contains("output_dir")) throw ConfigError("missing required key 'output_dir'");
  cfg.output_dir = get_or<std::string>(root, "", "output_dir", "");
  cfg.threads = get_or<unsigned>(root, "", "threads", 1u);

  const std::size_t batch = get_or<std::size_t>(root, "", "batch_size", 128);
  cfg.protocol = ProtocolConfig::three_stage(batch, 50, 5, 45, 5);
  cfg.protocol.seed = get_or<std::uint64_t>(root, "", "seed", 0);
  cfg.protocol.momentum = get_or<double>(root, "", "momentum", 0.9);

  const std::string split = get_or<std::string>(root, "", "train_split", "all");
  if (split != "all" && split != "train") throw ConfigError("key 'train_split' must be \"all\" or \"train\"");
  cfg.train_on_test = split == "all";

  if (root.contains("dataset")) {
    const auto& d = root.at("dataset");
    detail::check_keys(d, "dataset", {"synthetic", "cifar10", "cifar100"});
    if (d.size() != 1) throw ConfigError("key 'dataset' must name exactly one dataset");
    if (d.contains("synthetic")) {
      const auto& s = d.at("synthetic");
      detail::check_keys(s, "dataset.synthetic", {"classes", "per_class", "side", "noise", "jitter", "test_fraction", "seed"});
      SyntheticSource src;
      const std::string p = "dataset.synthetic";
      src.config.classes = get_or<std::size_t>(s, p, "classes", src.config.classes);
      src.config.per_class = get_or<std::size_t>(s, p, "per_class", src.config.per_class);
      src.config.side = get_or<std::size_t>(s, p, "side", src.config.side);
      src.config.noise = get_or<double>(s, p, "noise", src.config.noise);
      src.config.jitter = get_or<double>(s, p, "jitter", src.config.jitter);
      src.config.test_fraction = get_or<double>(s, p, "test_fraction", src.config.test_fraction);
      src.seed = get_or<std::uint64_t>(s, p, "seed", cfg.protocol.seed);
      cfg.dataset = src;
    } else {
      const bool ten = d.contains("cifar10");
      const std::string p = ten ? "dataset.cifar10" : "dataset.cifar100";
      const auto& c = d.at(ten ? "cifar10" : "cifar100");
      detail::check_keys(c, p, {"dir", "records_per_file"});
      if (!c.contains("dir")) throw ConfigError("missing required key '" + p + ".dir'");
      const std::string dir = get_or<std::string>(c, p, "dir", "");
      const auto rpf = get_or<std::size_t>(c, p, "records_per_file", kCifarRecordsPerFile);
      if (ten) cfg.dataset = Cifar10Source{dir, rpf};
      else cfg.dataset = Cifar100Source{dir, rpf};
    }
  }

  if (root.contains("stages")) {
    const auto& s = root.at("stages");
    detail::check_keys(s, "stages", {"pretrain", "readout", "finetune"});
    if (s.contains("pretrain")) detail::parse_stage(s.at("pretrain"), "stages.pretrain", cfg.protocol.pretrain);
    if (s.contains("readout")) detail::parse_stage(s.at("readout"), "stages.readout", cfg.protocol.readout);
    if (s.contains("finetune")) detail::parse_stage(s.at("finetune"), "stages.finetune", cfg.protocol.finetune);
  }

  if (root.contains("augment")) {
    const auto& a = root.at("augment");
    detail::check_keys(a, "augment", {"crop_scale", "crop_aspect", "flip_p", "jitter", "jitter_p", "grayscale_p"});
    auto& pol = cfg.augment;
    pol.crop_scale = detail::get_range(a, "augment", "crop_scale", pol.crop_scale);
    pol.crop_aspect = detail::get_range(a, "augment", "crop_aspect", pol.crop_aspect);
    pol.flip_p = get_or<double>(a, "augment", "flip_p", pol.flip_p);
    pol.jitter_p = get_or<double>(a, "augment", "jitter_p", pol.jitter_p);
    pol.grayscale_p = get_or<double>(a, "augment", "grayscale_p", pol.grayscale_p);
    if (a.contains("jitter")) {
      const auto& j = a.at("jitter");
      if (!j.is_array() || j.size() != 4 || !std::all_of(j.begin(), j.end(), [](const json& v) { return v.is_number(); }))
        throw ConfigError("key 'augment.jitter' must be [brightness, contrast, saturation, hue]");
      pol.jitter = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    }
  }

  if (root.contains("eval")) {
    const auto& e = root.at("eval");
    detail::check_keys(e, "eval", {"enabled", "knn_k", "knn_sweep", "probe_iterations", "probe_step",
                                   "loss_batch_size", "coarse_labels"});
    auto& ev = cfg.eval;
    ev.enabled = get_or<bool>(e, "eval", "enabled", ev.enabled);
    ev.knn_k = get_or<std::size_t>(e, "eval", "knn_k", ev.knn_k);
    ev.knn_sweep = get_or<bool>(e, "eval", "knn_sweep", ev.knn_sweep);
    ev.probe.iterations = get_or<std::size_t>(e, "eval", "probe_iterations", ev.probe.iterations);
    ev.probe.step = get_or<double>(e, "eval", "probe_step", ev.probe.step);
    ev.loss_batch_size = get_or<std::size_t>(e, "eval", "loss_batch_size", ev.loss_batch_size);
    ev.coarse_labels = get_or<bool>(e, "eval", "coarse_labels", ev.coarse_labels);
  }

  try {
    cfg.protocol.validate();
    cfg.augment.validate();
    if (auto* s = std::get_if<SyntheticSource>(&cfg.dataset)) s->config.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Command-line dataset spec:
///   cifar10:<dir>   cifar100:<dir>   synthetic[:key=value,...]
/// Synthetic keys: classes, per_class, side, noise, jitter, test_fraction, seed.
inline DatasetSource parse_data_spec(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "cifar10" || kind == "cifar100") {
    if (rest.empty()) throw ConfigError("data spec '" + spec + "' needs a directory, e.g. " + kind + ":/data/dir");
    if (kind == "cifar10") return Cifar10Source{rest};
    return Cifar100Source{rest};
  }
  if (kind != "synthetic") throw ConfigError("unknown data spec '" + spec + "' (expected cifar10:, cifar100: or synthetic)");
  SyntheticSource src;
  std::stringstream ss(rest);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("synthetic option '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    try {
      if (key == "classes") src.config.classes = std::stoul(value);
      else if (key == "per_class") src.config.per_class = std::stoul(value);
      else if (key == "side") src.config.side = std::stoul(value);
      else if (key == "noise") src.config.noise = std::stod(value);
      else if (key == "jitter") src.config.jitter = std::stod(value);
      else if (key == "test_fraction") src.config.test_fraction = std::stod(value);
      else if (key == "seed") src.seed = std::stoull(value);
      else throw ConfigError("unknown synthetic option '" + key + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("synthetic option '" + key + "' has an invalid value '" + value + "'");
    }
  }
  return src;
}

} // namespace tscn
