// Command-line front end: train, eval, predict, bench, gradcheck, ablate.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "ppcnn/checkpoint.hpp"
#include "ppcnn/run.hpp"

namespace {

using ppcnn::RunConfig;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  bool deterministic = false;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON run configuration");
  app->add_option("--seed", f.seed, "run seed");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--threads", f.threads, "worker threads for inference")->check(CLI::PositiveNumber);
  app->add_flag("--deterministic", f.deterministic, "pin FPS start and sampling to the seed");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : RunConfig::load(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.out) cfg.out_dir = *f.out;
  if (f.threads) cfg.threads = *f.threads;
  if (f.deterministic) cfg.deterministic = true;
  return cfg;
}

void save_resolved(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) return;
  std::filesystem::create_directories(cfg.out_dir);
  cfg.save((std::filesystem::path(cfg.out_dir) / "config.json").string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Projection-based point convolution networks"};
  app.require_subcommand(1);

  CommonFlags train_f, eval_f, predict_f, bench_f, grad_f, ablate_f;

  auto* train = app.add_subcommand("train", "train on labeled scenes");
  add_common(train, train_f);
  std::optional<std::size_t> steps;
  train->add_option("--steps", steps, "optimizer steps");

  auto* eval = app.add_subcommand("eval", "mIoU of a checkpoint");
  add_common(eval, eval_f);
  std::string eval_ckpt;
  std::vector<std::string> eval_files;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_files, "labeled point files (default: validation scenes)");

  auto* predict = app.add_subcommand("predict", "label every point of a text point file");
  add_common(predict, predict_f);
  std::string pred_ckpt, pred_in, pred_out;
  predict->add_option("--checkpoint", pred_ckpt, "checkpoint file")->required();
  predict->add_option("--input", pred_in, "point file")->required();
  predict->add_option("--output", pred_out, "one label per line")->required();

  auto* bench = app.add_subcommand("bench", "timing harness");
  add_common(bench, bench_f);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(grad, grad_f);

  auto* ablate = app.add_subcommand("ablate", "ablation grids");
  add_common(ablate, ablate_f);
  std::vector<std::string> grids;
  ablate->add_option("--grid", grids, "grids to run (branches, axes, projection, resolution, conv, fusion)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      RunConfig cfg = resolve(train_f);
      if (steps) cfg.steps = *steps;
      auto r = ppcnn::run_train(cfg, &std::cerr);
      std::cout << "untrained_accuracy," << r.untrained_accuracy
                << "\nfinal_step_accuracy," << r.final_step_accuracy
                << "\neval_mode_train_accuracy," << r.train_accuracy
                << "\nbest_val_miou," << r.best_val_miou << '\n';
    } else if (eval->parsed()) {
      RunConfig cfg = resolve(eval_f);
      save_resolved(cfg);
      auto r = ppcnn::run_eval(cfg, eval_ckpt, eval_files, &std::cerr);
      ppcnn::write_miou_csv(std::cout, r);
      if (!cfg.out_dir.empty()) {
        std::ofstream out(std::filesystem::path(cfg.out_dir) / "miou.csv");
        ppcnn::write_miou_csv(out, r);
      }
    } else if (predict->parsed()) {
      RunConfig cfg = resolve(predict_f);
      save_resolved(cfg);
      auto labels = ppcnn::run_predict(cfg, pred_ckpt, pred_in, pred_out);
      std::cerr << "wrote " << labels.size() << " labels to " << pred_out << '\n';
    } else if (bench->parsed()) {
      RunConfig cfg = resolve(bench_f);
      auto rows = ppcnn::run_bench(cfg, &std::cerr);
      ppcnn::write_bench_csv(std::cout, rows);
    } else if (grad->parsed()) {
      RunConfig cfg = resolve(grad_f);
      save_resolved(cfg);
      auto rows = ppcnn::run_gradcheck(ppcnn::standard_gradcheck_units(cfg.seed));
      ppcnn::write_gradcheck_csv(std::cout, rows);
      if (!cfg.out_dir.empty()) {
        std::ofstream out(std::filesystem::path(cfg.out_dir) / "gradcheck.csv");
        ppcnn::write_gradcheck_csv(out, rows);
      }
      for (const auto& r : rows) {
        if (!r.passed) return 1;
      }
    } else if (ablate->parsed()) {
      RunConfig cfg = resolve(ablate_f);
      if (!grids.empty()) cfg.ablate.grids = grids;
      cfg.validate();
      auto rows = ppcnn::run_ablate(cfg, &std::cerr);
      ppcnn::write_ablation_csv(std::cout, rows);
    }
  } catch (const ppcnn::UsageError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  return 0;
}
