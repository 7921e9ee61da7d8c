#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "tscn/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Contrastive 2D image embeddings with a Cauchy-kernel InfoNCE loss"};
  app.require_subcommand(1);

  std::string config, checkpoint, data, out, in;
  bool knn_sweep = false, quiet = false, coarse = false;
  std::size_t knn_k = 15;
  unsigned threads = 1;

  auto* train = app.add_subcommand("train", "Run the three-stage training protocol");
  train->add_option("--config", config, "Run configuration (JSON)")->required();
  train->add_flag("--quiet", quiet, "Do not print per-epoch progress");

  auto* embed = app.add_subcommand("embed", "Write the embedding of every image as CSV");
  embed->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  embed->add_option("--data", data, "cifar10:DIR | cifar100:DIR | synthetic[:key=value,...]")->required();
  embed->add_option("--out", out, "Output CSV")->required();
  embed->add_option("--threads", threads, "Worker threads");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and print a JSON report");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", data, "cifar10:DIR | cifar100:DIR | synthetic[:key=value,...]")->required();
  eval->add_flag("--knn-sweep", knn_sweep, "Report kNN accuracy for k = 1..30");
  eval->add_option("--knn-k", knn_k, "Neighbours for the single kNN score")->check(CLI::PositiveNumber);
  eval->add_flag("--coarse", coarse, "Score against coarse (superclass) labels");
  eval->add_option("--out", out, "Also write the report to this file");
  eval->add_option("--threads", threads, "Worker threads");

  auto* scatter = app.add_subcommand("scatter", "Render a 2D embedding CSV as an SVG scatter plot");
  scatter->add_option("--in", in, "Embedding CSV")->required();
  scatter->add_option("--out", out, "Output SVG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train) {
      auto progress = [](const std::string& line) { std::fputs(line.c_str(), stdout), std::fflush(stdout); };
      const auto outcome = quiet ? tscn::cmd_train(config) : tscn::cmd_train(config, progress);
      std::printf("final loss %s, checkpoint %s\n", tscn::format_g17(outcome.report.final_loss()).c_str(),
                  outcome.checkpoints.back().string().c_str());
    } else if (*embed) {
      tscn::cmd_embed(checkpoint, tscn::parse_data_spec(data), out, threads);
    } else if (*eval) {
      tscn::EvalSettings s;
      s.knn_ks = knn_sweep ? tscn::EvalSettings::knn_sweep_ks() : std::vector<std::size_t>{knn_k};
      s.coarse_labels = coarse;
      s.threads = threads;
      const std::string report = tscn::report_to_json(tscn::cmd_eval(checkpoint, tscn::parse_data_spec(data), s)).dump(2) + "\n";
      if (!out.empty()) tscn::write_text_file(out, report);
      std::fputs(report.c_str(), stdout);
    } else if (*scatter) {
      tscn::cmd_scatter(in, out);
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg)
      if (c == '\n') c = ' ';
    std::fprintf(stderr, "tscn: error: %s\n", msg.c_str());
    return 1;
  }
  return 0;
}
