#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "checkpoint.hpp"
#include "config.hpp"
#include "eval.hpp"
#include "export.hpp"
#include "trainer.hpp"

namespace tscn {

// ---------------------------------------------------------------------------
// Inference helpers
// ---------------------------------------------------------------------------

struct Embedding {
  Matrix<float> h;  // backbone output
  Matrix<float> z;  // readout output
};

inline void check_input_shape(const EncoderParams<float>& p, const LabeledDataset& ds) {
  if (ds.size() == 0) throw ValidationError("dataset is empty");
  const auto& img = ds.images.front();
  const TensorShape got{img.channels, img.height, img.width};
  if (got.channels != p.input.channels || got.height != p.input.height || got.width != p.input.width)
    throw ShapeError("checkpoint expects images of shape " + std::to_string(p.input.channels) + "x" +
                     std::to_string(p.input.height) + "x" + std::to_string(p.input.width) + ", dataset has " +
                     std::to_string(got.channels) + "x" + std::to_string(got.height) + "x" +
                     std::to_string(got.width));
}

/// Embeds the given images without augmentation (pixels scaled to [0, 1]),
/// in blocks so that activation caches stay small.
inline Embedding embed_images(const LabeledDataset& ds, const std::vector<std::size_t>& indices,
                              const EncoderParams<float>& p, const ExecOptions& exec = {}, std::size_t block = 256) {
  check_input_shape(p, ds);
  const std::size_t dim = ds.images.front().pixels.size();
  Embedding out{Matrix<float>(indices.size(), p.h_dim()), Matrix<float>(indices.size(), p.readout_dim())};
  for (std::size_t start = 0; start < indices.size(); start += block) {
    const std::size_t n = std::min(block, indices.size() - start);
    Matrix<float> x(n, dim);
    for (std::size_t i = 0; i < n; ++i) to_unit_float<float>(ds.images[indices[start + i]], x.row(i));
    const auto fw = forward(x, p, exec);
    std::copy(fw.h.storage().begin(), fw.h.storage().end(), out.h.data().data() + start * out.h.cols());
    std::copy(fw.z.storage().begin(), fw.z.storage().end(), out.z.data().data() + start * out.z.cols());
  }
  return out;
}

inline Matrix<float> select_rows(const Matrix<float>& m, const std::vector<std::size_t>& rows) {
  Matrix<float> out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  return out;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Mean InfoNCE loss over drop-last batches of augmented test-image pairs.
/// NaN when fewer than two test images exist.
inline double heldout_loss(const LabeledDataset& ds, const std::vector<std::size_t>& pool, const EncoderParams<float>& p,
                           const KernelSpec& kernel, const AugmentPolicy& policy, std::size_t batch_size,
                           std::uint64_t seed, const ExecOptions& exec = {}) {
  if (pool.size() < 2) return std::nan("");
  const std::size_t b = std::clamp<std::size_t>(batch_size, 2, pool.size());
  const RandomStream root(seed, 0xE7A1);
  double sum = 0.0;
  const auto batches = epoch_batches(pool.size(), b, root.child(0).next(), 0);
  for (const auto& positions : batches) {
    std::vector<std::size_t> batch(positions.size());
    for (std::size_t k = 0; k < positions.size(); ++k) batch[k] = pool[positions[k]];
    const auto x = augmented_batch<float>(ds, batch, policy, root.child(1), 0, exec);
    const auto fw = forward(x, p, exec);
    sum += infonce_loss(PairedEmbedding<double>(fw.z.cast<double>()), kernel);
  }
  return sum / static_cast<double>(batches.size());
}

struct EvalSettings {
  std::vector<std::size_t> knn_ks{15};
  ProbeOptions probe{};
  std::size_t loss_batch_size = 128;
  bool coarse_labels = false;
  AugmentPolicy policy{};
  unsigned threads = 1;

  static EvalSettings from(const EvalOptions& o, const AugmentPolicy& policy, unsigned threads) {
    EvalSettings s;
    s.knn_ks = o.knn_sweep ? knn_sweep_ks() : std::vector<std::size_t>{o.knn_k};
    s.probe = o.probe;
    s.loss_batch_size = o.loss_batch_size;
    s.coarse_labels = o.coarse_labels;
    s.policy = policy;
    s.threads = threads;
    return s;
  }
  static std::vector<std::size_t> knn_sweep_ks() {
    std::vector<std::size_t> ks(30);
    std::iota(ks.begin(), ks.end(), std::size_t{1});
    return ks;
  }
};

/// kNN in Z (train split -> test split), linear probe in H, held-out loss,
/// covariance spectrum of test-set Z, per-class norm quartiles and the ARI
/// of k-means (k = class count) against the labels on the test set.
inline EvalReport evaluate(const Checkpoint& ck, const LabeledDataset& ds, const EvalSettings& s) {
  ds.validate();
  const auto train = ds.indices(false), test = ds.indices(true);
  if (train.empty() || test.empty()) throw ValidationError("evaluation needs both train and test images");
  Labels labels = ds.labels;
  if (s.coarse_labels) {
    if (!ds.coarse_labels) throw ValidationError("dataset has no coarse labels");
    labels = *ds.coarse_labels;
  }
  auto pick = [&](const std::vector<std::size_t>& ix) {
    Labels out;
    for (auto i : ix) out.push_back(labels[i]);
    return out;
  };
  const Labels ytrain = pick(train), ytest = pick(test);
  const ExecOptions exec{s.threads};
  const Embedding etr = embed_images(ds, train, ck.params, exec), ete = embed_images(ds, test, ck.params, exec);

  EvalReport r;
  for (std::size_t k : s.knn_ks) r.knn_accuracy[k] = knn_accuracy(etr.z, ytrain, ete.z, ytest, k, s.threads);
  r.linear_accuracy = linear_probe(etr.h, ytrain, ete.h, ytest, s.probe);
  r.final_loss = heldout_loss(ds, test, ck.params, ck.kernel, s.policy, s.loss_batch_size, ck.seed, exec);
  r.spectrum = covariance_spectrum(ete.z);
  r.norm_quartiles = class_norm_stats(ete.z, ytest);
  const std::size_t classes = std::set<std::uint32_t>(ytest.begin(), ytest.end()).size();
  r.ari = adjusted_rand_index(kmeans(ete.z, std::min(classes, ete.z.rows()), ck.seed), ytest);
  return r;
}

/// Report keys: knn_accuracy (object keyed by k), linear_accuracy,
/// final_loss (null if undefined), eigen_spectrum (descending),
/// class_norm_quartiles (list of {label, count, q25, median, q75}), ari.
inline nlohmann::json report_to_json(const EvalReport& r) {
  using nlohmann::json;
  json knn = json::object();
  for (const auto& [k, acc] : r.knn_accuracy) knn[std::to_string(k)] = acc;
  json norms = json::array();
  for (const auto& q : r.norm_quartiles)
    norms.push_back({{"label", q.label}, {"count", q.count}, {"q25", q.q25}, {"median", q.q50}, {"q75", q.q75}});
  return json{{"knn_accuracy", knn},
              {"linear_accuracy", r.linear_accuracy},
              {"final_loss", std::isfinite(r.final_loss) ? json(r.final_loss) : json(nullptr)},
              {"eigen_spectrum", r.spectrum},
              {"class_norm_quartiles", norms},
              {"ari", r.ari}};
}

inline EvalReport cmd_eval(const std::filesystem::path& checkpoint, const DatasetSource& data, const EvalSettings& s) {
  return evaluate(load_checkpoint(checkpoint), load_dataset(data), s);
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

inline EmbeddingTable embedding_table(const Checkpoint& ck, const LabeledDataset& ds, unsigned threads = 1) {
  ds.validate();
  const auto all = ds.all_indices();
  const Embedding e = embed_images(ds, all, ck.params, ExecOptions{threads});
  EmbeddingTable t{all, ds.labels, ds.is_test, e.z.cast<double>()};
  return t;
}

inline void cmd_embed(const std::filesystem::path& checkpoint, const DatasetSource& data,
                      const std::filesystem::path& out, unsigned threads = 1) {
  write_text_file(out, write_embedding_csv(embedding_table(load_checkpoint(checkpoint), load_dataset(data), threads)));
}

// ---------------------------------------------------------------------------
// scatter
// ---------------------------------------------------------------------------

inline void cmd_scatter(const std::filesystem::path& csv, const std::filesystem::path& svg) {
  write_text_file(svg, render_scatter_svg(parse_embedding_csv(read_text_file(csv), csv.string())));
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline std::string loss_log_line(int stage, const EpochRecord& r) {
  return std::to_string(stage) + ' ' + std::to_string(r.epoch) + ' ' + format_g17(r.mean_loss) + ' ' +
         format_g17(r.lr) + '\n';
}

struct TrainOutcome {
  Checkpoint checkpoint;
  ProtocolReport report;
  std::vector<std::filesystem::path> checkpoints;  // stage1, stage2, stage3, final
  std::filesystem::path loss_log;
  std::optional<EvalReport> eval;
};

/// Runs the configured protocol. Output directory contents:
///   stage1.tscn stage2.tscn stage3.tscn final.tscn   checkpoints
///   loss_log.txt    "stage epoch mean_loss lr" per epoch (epoch within stage)
///   eval.json       when evaluation is enabled
inline TrainOutcome run_training(const RunConfig& cfg, const std::function<void(const std::string&)>& progress = {}) {
  const LabeledDataset ds = load_dataset(cfg.dataset);
  ds.validate();
  std::filesystem::create_directories(cfg.output_dir);
  if (!std::filesystem::is_directory(cfg.output_dir))
    throw ConfigError("output directory " + cfg.output_dir.string() + " cannot be created");

  TrainOutcome outcome;
  outcome.loss_log = cfg.output_dir / "loss_log.txt";
  std::string log;
  int current_stage = 1;

  TrainOptions opts;
  opts.policy = cfg.augment;
  opts.exec.threads = cfg.threads;
  if (!cfg.train_on_test) opts.indices = ds.indices(false);
  opts.on_epoch = [&](const std::string& name, const EpochRecord& r) {
    const std::string line = loss_log_line(current_stage, r);
    log += line;
    if (progress) progress(name + " " + line);
  };
  const auto on_stage_end = [&](int stage, const StageConfig& sc, const EncoderParams<float>& p) {
    const Checkpoint ck{p, cfg.protocol.seed, stage, sc.name, sc.kernel};
    const auto path = cfg.output_dir / ("stage" + std::to_string(stage) + ".tscn");
    save_checkpoint(ck, path);
    outcome.checkpoints.push_back(path);
    current_stage = stage + 1;
  };
  auto result = run_protocol<float>(ds, cfg.protocol, RandomStream(cfg.protocol.seed), opts, on_stage_end);
  write_text_file(outcome.loss_log, log);

  outcome.checkpoint = Checkpoint{std::move(result.params), cfg.protocol.seed, 3, "final", cfg.protocol.finetune.kernel};
  outcome.report = std::move(result.report);
  const auto final_path = cfg.output_dir / "final.tscn";
  save_checkpoint(outcome.checkpoint, final_path);
  outcome.checkpoints.push_back(final_path);

  if (cfg.eval.enabled) {
    outcome.eval = evaluate(outcome.checkpoint, ds, EvalSettings::from(cfg.eval, cfg.augment, cfg.threads));
    write_text_file(cfg.output_dir / "eval.json", report_to_json(*outcome.eval).dump(2) + "\n");
  }
  return outcome;
}

inline TrainOutcome cmd_train(const std::filesystem::path& config,
                              const std::function<void(const std::string&)>& progress = {}) {
  return run_training(load_run_config(config), progress);
}

} // namespace tscn
