// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// vitlab: train, evaluate and analyse LayerNorm placements in small ViTs.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "vitlab/experiments.hpp"
#include "vitlab/io.hpp"

namespace {

struct CommonFlags {
  std::string spec;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string dataset;
  std::string data_dir;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool spec_required) {
  auto* opt = cmd->add_option("--spec", f.spec, "Run spec (JSON)");
  if (spec_required) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "Output directory (overrides the run spec)");
  cmd->add_option("--seed", f.seed, "Training seed (overrides the run spec)");
  cmd->add_option("--dataset", f.dataset, "Dataset (overrides the run spec)")
      ->check(CLI::IsMember({"mnist", "cifar10", "synthetic"}));
  cmd->add_option("--data-dir", f.data_dir, "Dataset directory (overrides the run spec)");
}

vitlab::RunSpec resolve(const CommonFlags& f) {
  vitlab::RunSpec spec = f.spec.empty() ? vitlab::RunSpec{} : vitlab::load_run_spec(f.spec);
  if (!f.out.empty()) spec.out_dir = f.out;
  if (f.seed) spec.train.seed = *f.seed;
  if (!f.dataset.empty()) spec.data.dataset = f.dataset;
  if (!f.data_dir.empty()) spec.data.dir = f.data_dir;
  spec.validate();
  return spec;
}

std::string accuracy_text(const std::optional<double>& a) {
  return a ? vitlab::format_number(*a) : std::string("n/a");
}

void print_sweep(const vitlab::SweepOutcome& s) {
  for (const auto& r : s.runs) {
    std::printf("%-20s %-8s accuracy %s\n", r.name.c_str(), r.status == "ok" ? "ok" : "FAILED",
                accuracy_text(r.accuracy).c_str());
  }
  std::printf("wrote %s\n", s.csv_path.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vitlab: LayerNorm placement lab for Vision Transformers"};
  app.require_subcommand(1);

  CommonFlags train_f, eval_f, sweep_f, ablate_f, norms_f;
  std::string eval_ckpt, export_ckpt, export_out = "out", fault;
  std::string check_spec, check_out = "out";
  std::uint64_t check_seed = 0;
  double check_tol = 1e-4;

  auto* train = app.add_subcommand("train", "Train one model and write metrics and a checkpoint");
  add_common(train, train_f, true);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_common(eval, eval_f, false);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);

  auto* sweep = app.add_subcommand("sweep-placements",
                                   "Nine placements plus NormFormer, Sub-LN and DPN (12 runs)");
  add_common(sweep, sweep_f, true);

  auto* ablate = app.add_subcommand("ablate-stem", "Stem-norm ablations relative to DPN");
  add_common(ablate, ablate_f, true);

  auto* norms = app.add_subcommand("grad-norms", "Per-layer gradient norms, stem none vs dpn");
  add_common(norms, norms_f, true);

  auto* exp = app.add_subcommand("export-scales", "Write the pixel-space norm scales as PGM + CSV");
  exp->add_option("--checkpoint", export_ckpt, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  exp->add_option("--out", export_out, "Output directory");

  auto* check = app.add_subcommand("grad-check", "Finite-difference check of every model variant");
  check->add_option("--spec", check_spec, "Optional spec whose model section sets the dimensions")
      ->check(CLI::ExistingFile);
  check->add_option("--out", check_out, "Output directory");
  check->add_option("--seed", check_seed, "Seed for parameters and inputs");
  check->add_option("--tolerance", check_tol, "Relative error tolerance");
  check->add_option("--inject-fault", fault, "Scale the backward pass of this op (test fixture)")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help and version exit 0; every usage error maps to 2 like runtime errors.
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      const auto r = vitlab::cmd_train(resolve(train_f));
      std::printf("final eval accuracy %s\nwrote %s\nwrote %s\n", accuracy_text(r.accuracy).c_str(),
                  r.metrics_path.string().c_str(), r.checkpoint_path.string().c_str());
    } else if (*eval) {
      const auto r = vitlab::cmd_eval(resolve(eval_f), eval_ckpt);
      std::printf("accuracy %s on %zu examples\nwrote %s\n",
                  vitlab::format_number(r.accuracy).c_str(), r.examples,
                  r.csv_path.string().c_str());
    } else if (*sweep) {
      print_sweep(vitlab::cmd_sweep_placements(resolve(sweep_f)));
    } else if (*ablate) {
      print_sweep(vitlab::cmd_ablate_stem(resolve(ablate_f)));
    } else if (*norms) {
      const auto r = vitlab::cmd_grad_norms(resolve(norms_f));
      std::printf("stem gradient norm ratio none/dpn %s\n",
                  vitlab::format_number(r.stem_ratio).c_str());
      std::printf("embedding gradient norm ratio none/dpn %s\n",
                  vitlab::format_number(r.embedding_ratio).c_str());
      std::printf("wrote %s\nwrote %s\nwrote %s\n", r.depth_csv.string().c_str(),
                  r.embedding_csv.string().c_str(), r.summary_csv.string().c_str());
    } else if (*exp) {
      const auto r = vitlab::cmd_export_scales(export_ckpt, export_out);
      for (const auto& p : r.images) std::printf("wrote %s\n", p.string().c_str());
      std::printf("wrote %s\n", r.csv_path.string().c_str());
    } else if (*check) {
      vitlab::GradCheckCommand opts;
      opts.model = check_spec.empty() ? vitlab::micro_model_config()
                                      : vitlab::load_run_spec(check_spec).model;
      opts.out_dir = check_out;
      opts.seed = check_seed;
      opts.tolerance = check_tol;
      if (!fault.empty()) vitlab::set_backward_fault(fault);
      const auto r = vitlab::cmd_gradient_check(opts);
      double worst = 0.0;
      for (const auto& row : r.rows) worst = std::max(worst, row.entry.max_rel_error);
      std::printf("%zu configs, %zu parameter rows, max relative error %s\n", r.configs,
                  r.rows.size(), vitlab::format_number(worst).c_str());
      for (const auto& f : r.failures()) std::printf("FAIL %s\n", f.c_str());
      std::printf("wrote %s\n", r.csv_path.string().c_str());
      return r.passed() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
