// Copyright 2026 The vitlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vitlab/experiments.hpp"

#include <algorithm>
#include <cmath>

#include "vitlab/checkpoint.hpp"
#include "vitlab/rng.hpp"

namespace vitlab {
namespace fs = std::filesystem;

namespace {

void check_keys(const nlohmann::json& j, std::string_view ctx,
                std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw Error("config section '" + std::string(ctx) + "' must be an object");
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw Error("unknown config key '" + std::string(ctx) + "." + item.key() + "'");
    }
  }
}

DataSpec data_spec_from_json(const nlohmann::json& j) {
  check_keys(j, "data",
             {"dataset", "dir", "value_range", "train_limit", "test_limit", "synthetic_train",
              "synthetic_test", "synthetic_seed"});
  DataSpec d;
  try {
    if (j.contains("dataset")) d.dataset = j.at("dataset").get<std::string>();
    if (j.contains("dir")) d.dir = j.at("dir").get<std::string>();
    if (j.contains("value_range")) d.value_range = j.at("value_range").get<bool>();
    if (j.contains("train_limit")) d.train_limit = j.at("train_limit").get<std::size_t>();
    if (j.contains("test_limit")) d.test_limit = j.at("test_limit").get<std::size_t>();
    if (j.contains("synthetic_train")) d.synthetic_train = j.at("synthetic_train").get<std::size_t>();
    if (j.contains("synthetic_test")) d.synthetic_test = j.at("synthetic_test").get<std::size_t>();
    if (j.contains("synthetic_seed")) d.synthetic_seed = j.at("synthetic_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad value in config section 'data': ") + e.what());
  }
  return d;
}

// CSV fields never carry separators; error text is folded onto one line.
std::string csv_safe(std::string s) {
  for (char& c : s) {
    if (c == ',') c = ';';
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

std::string opt_number(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

Dataset take_first(Dataset d, std::size_t limit) {
  if (limit == 0 || limit >= d.count) return d;
  d.count = limit;
  d.images.resize(limit * d.image_size());
  d.labels.resize(limit);
  return d;
}

ParamTree<double> load_params_as_double(const fs::path& path, ModelConfig* cfg) {
  const std::string bytes = read_file(path);
  if (checkpoint_dtype(bytes) == DType::f64) {
    auto ck = decode_checkpoint<double>(bytes);
    *cfg = ck.config;
    return std::move(ck.params);
  }
  auto ck = decode_checkpoint<float>(bytes);
  *cfg = ck.config;
  return ck.params.cast<double>();
}

}  // namespace

void RunSpec::validate() const {
  if (name.empty() || name.find_first_of(",/\\\n") != std::string::npos) {
    throw Error("run name '" + name + "' must be non-empty without ',', '/' or newlines");
  }
  model.validate();
  train.validate();
  if (data.dataset != "synthetic" && data.dataset != "mnist" && data.dataset != "cifar10") {
    throw Error("unknown dataset '" + data.dataset + "'; valid options: mnist, cifar10, synthetic");
  }
}

RunSpec run_spec_from_json(const nlohmann::json& j) {
  check_keys(j, "spec", {"name", "model", "train", "data", "out_dir"});
  RunSpec s;
  if (j.contains("name")) s.name = j.at("name").get<std::string>();
  if (j.contains("model")) s.model = model_config_from_json(j.at("model"), "model");
  if (j.contains("train")) s.train = train_config_from_json(j.at("train"), "train");
  if (j.contains("data")) s.data = data_spec_from_json(j.at("data"));
  if (j.contains("out_dir")) s.out_dir = j.at("out_dir").get<std::string>();
  s.validate();
  return s;
}

RunSpec load_run_spec(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("cannot parse spec '" + path.string() + "': " + e.what());
  }
  return run_spec_from_json(j);
}

nlohmann::json to_json(const RunSpec& spec) {
  return nlohmann::json{
      {"name", spec.name},
      {"model", to_json(spec.model)},
      {"train", to_json(spec.train)},
      {"data",
       {{"dataset", spec.data.dataset},
        {"dir", spec.data.dir.string()},
        {"value_range", spec.data.value_range},
        {"train_limit", spec.data.train_limit},
        {"test_limit", spec.data.test_limit},
        {"synthetic_train", spec.data.synthetic_train},
        {"synthetic_test", spec.data.synthetic_test},
        {"synthetic_seed", spec.data.synthetic_seed}}},
      {"out_dir", spec.out_dir.string()}};
}

Splits load_splits(const RunSpec& spec) {
  Splits s;
  const auto& d = spec.data;
  const auto& m = spec.model;
  if (d.dataset == "mnist") {
    s.train = read_mnist(d.dir, "train");
    s.test = read_mnist(d.dir, "test");
  } else if (d.dataset == "cifar10") {
    s.train = read_cifar10(d.dir, "train");
    s.test = read_cifar10(d.dir, "test");
  } else if (d.dataset == "synthetic") {
    s.train = synthetic_dataset(m.num_classes, d.synthetic_train, m.image_height, m.image_width,
                                m.channels, d.synthetic_seed);
    s.test = synthetic_dataset(m.num_classes, d.synthetic_test, m.image_height, m.image_width,
                               m.channels, d.synthetic_seed + 1);
  } else {
    throw Error("unknown dataset '" + d.dataset + "'; valid options: mnist, cifar10, synthetic");
  }
  s.train = take_first(std::move(s.train), d.train_limit);
  s.test = take_first(std::move(s.test), d.test_limit);
  if (d.value_range) {
    s.train = value_range(s.train);
    s.test = value_range(s.test);
  }
  return s;
}

std::string metrics_csv(const std::vector<MetricsRecord>& records) {
  std::vector<std::string> header = {"step",     "loss",      "learning_rate",
                                     "eval_accuracy", "grad_norm", "embedding_grad_norm"};
  if (!records.empty()) {
    for (const auto& [group, norm] : records.front().group_norms) {
      header.push_back("grad_norm_" + group);
    }
  }
  CsvWriter csv(header);
  for (const auto& r : records) {
    std::vector<std::string> row = {std::to_string(r.step),        format_number(r.loss),
                                    format_number(r.learning_rate), opt_number(r.eval_accuracy),
                                    format_number(r.grad_norm),
                                    format_number(r.embedding_grad_norm)};
    for (const auto& [group, norm] : r.group_norms) row.push_back(format_number(norm));
    csv.row(std::move(row));
  }
  return csv.str();
}

RunOutcome run_training(const RunSpec& spec, const Splits& splits, const fs::path& dir,
                        std::size_t log_every_override, std::vector<MetricsRecord>* records_out) {
  TrainConfig tc = spec.train;
  if (log_every_override > 0) tc.log_every = log_every_override;
  auto result = train<float>(spec.model, tc, splits.train, &splits.test);
  RunOutcome out;
  out.name = spec.name;
  out.accuracy = result.final_eval_accuracy;
  out.metrics_path = dir / "metrics.csv";
  out.checkpoint_path = dir / "checkpoint.bin";
  write_file_atomic(out.metrics_path, metrics_csv(result.records));
  save_checkpoint(out.checkpoint_path, spec.model, result.params);
  if (records_out != nullptr) *records_out = std::move(result.records);
  return out;
}

RunOutcome cmd_train(const RunSpec& spec) {
  spec.validate();
  return run_training(spec, load_splits(spec), spec.out_dir);
}

EvalOutcome cmd_eval(const RunSpec& spec, const fs::path& checkpoint) {
  ModelConfig cfg;
  const auto params = load_params_as_double(checkpoint, &cfg);
  RunSpec data_spec = spec;
  data_spec.model = cfg;
  const Splits splits = load_splits(data_spec);
  EvalOutcome out;
  out.accuracy = evaluate(params.cast<float>(), cfg, splits.test);
  out.examples = splits.test.count;
  out.csv_path = spec.out_dir / "eval.csv";
  CsvWriter csv({"split", "examples", "accuracy"});
  csv.row({"test", std::to_string(out.examples), format_number(out.accuracy)});
  write_file_atomic(out.csv_path, csv.str());
  return out;
}

std::vector<VariantRun> placement_sweep_variants(const ModelConfig& base) {
  ModelConfig plain = base;
  plain.stem_norm = StemNorm::none;
  plain.stem_norm_op = NormKind::layer_norm;
  plain.block_extra = BlockExtra::none;
  std::vector<VariantRun> runs;
  for (const auto& [sa, mlp] : placement_grid()) {
    ModelConfig m = plain;
    m.block_sa_ln = sa;
    m.block_mlp_ln = mlp;
    runs.push_back({"sa_" + std::string(to_string(sa)) + "-mlp_" + std::string(to_string(mlp)), m});
  }
  plain.block_sa_ln = Placement::pre;
  plain.block_mlp_ln = Placement::pre;
  for (BlockExtra extra : {BlockExtra::normformer, BlockExtra::subln}) {
    ModelConfig m = plain;
    m.block_extra = extra;
    runs.push_back({std::string(to_string(extra)), m});
  }
  ModelConfig dpn = plain;
  dpn.stem_norm = StemNorm::dpn;
  runs.push_back({"dpn", dpn});
  return runs;
}

std::vector<VariantRun> stem_ablation_variants(const ModelConfig& base) {
  std::vector<VariantRun> runs;
  for (StemNorm s : {StemNorm::none, StemNorm::pre, StemNorm::post, StemNorm::post_posemb,
                     StemNorm::dpn}) {
    ModelConfig m = base;
    m.stem_norm = s;
    m.stem_norm_op = NormKind::layer_norm;
    runs.push_back({std::string(to_string(s)), m});
  }
  const std::pair<const char*, NormKind> ops[] = {{"only_learnable", NormKind::affine_only},
                                                  {"rmsnorm", NormKind::rms_norm},
                                                  {"no_learnable", NormKind::normalize_only}};
  for (const auto& [name, op] : ops) {
    ModelConfig m = base;
    m.stem_norm = StemNorm::dpn;
    m.stem_norm_op = op;
    runs.push_back({name, m});
  }
  return runs;
}

namespace {

SweepOutcome run_sweep(const RunSpec& spec, const std::vector<VariantRun>& variants,
                       std::string_view reference, const fs::path& csv_name) {
  spec.validate();
  const Splits splits = load_splits(spec);
  SweepOutcome out;
  for (const auto& v : variants) {
    RunSpec rs = spec;
    rs.name = v.name;
    rs.model = v.model;
    RunOutcome r;
    r.name = v.name;
    try {
      r = run_training(rs, splits, spec.out_dir / "runs" / v.name);
    } catch (const std::exception& e) {
      r.status = csv_safe(std::string("failed: ") + e.what());
      r.accuracy.reset();
    }
    out.runs.push_back(std::move(r));
  }
  std::optional<double> ref;
  for (const auto& r : out.runs) {
    if (r.name == reference) ref = r.accuracy;
  }
  CsvWriter csv({"config", "stem_norm", "stem_norm_op", "block_sa_ln", "block_mlp_ln",
                 "block_extra", "status", "final_eval_accuracy",
                 "delta_vs_" + std::string(reference)});
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const auto& m = variants[i].model;
    const auto& r = out.runs[i];
    std::optional<double> delta;
    if (ref && r.accuracy) delta = *r.accuracy - *ref;
    csv.row({r.name, std::string(to_string(m.stem_norm)), std::string(to_string(m.stem_norm_op)),
             std::string(to_string(m.block_sa_ln)), std::string(to_string(m.block_mlp_ln)),
             std::string(to_string(m.block_extra)), r.status, opt_number(r.accuracy),
             opt_number(delta)});
  }
  out.csv_path = spec.out_dir / csv_name;
  write_file_atomic(out.csv_path, csv.str());
  return out;
}

}  // namespace

SweepOutcome cmd_sweep_placements(const RunSpec& spec) {
  return run_sweep(spec, placement_sweep_variants(spec.model), "sa_pre-mlp_pre", "placements.csv");
}

SweepOutcome cmd_ablate_stem(const RunSpec& spec) {
  return run_sweep(spec, stem_ablation_variants(spec.model), "dpn", "ablate_stem.csv");
}

GradNormOutcome cmd_grad_norms(const RunSpec& spec) {
  spec.validate();
  const Splits splits = load_splits(spec);
  const std::size_t total = spec.train.total_steps;
  const std::size_t window = std::max<std::size_t>(1, (total + 4) / 5);
  const std::size_t first = total - window;

  const std::pair<const char*, StemNorm> twins[] = {{"none", StemNorm::none},
                                                    {"dpn", StemNorm::dpn}};
  std::vector<std::vector<MetricsRecord>> streams;
  for (const auto& [name, stem] : twins) {
    RunSpec rs = spec;
    rs.name = name;
    rs.model.stem_norm = stem;
    rs.model.stem_norm_op = NormKind::layer_norm;
    std::vector<MetricsRecord> records;
    run_training(rs, splits, spec.out_dir / "runs" / name, 1, &records);
    streams.push_back(std::move(records));
  }

  // Mean over the final window per layer group, plus the embedding layer.
  auto window_means = [&](const std::vector<MetricsRecord>& recs) {
    std::vector<double> sums(recs.front().group_norms.size(), 0.0);
    double emb = 0.0;
    std::size_t n = 0;
    for (const auto& r : recs) {
      if (r.step < first) continue;
      for (std::size_t k = 0; k < sums.size(); ++k) sums[k] += r.group_norms[k].second;
      emb += r.embedding_grad_norm;
      ++n;
    }
    for (double& s : sums) s /= static_cast<double>(n);
    sums.push_back(emb / static_cast<double>(n));
    return sums;
  };

  GradNormOutcome out;
  CsvWriter depth({"run", "depth_index", "layer_block_granularity", "mean_grad_norm_final_20pct"});
  std::vector<std::vector<double>> means;
  for (std::size_t r = 0; r < streams.size(); ++r) {
    means.push_back(window_means(streams[r]));
    const auto& groups = streams[r].front().group_norms;
    for (std::size_t k = 0; k < groups.size(); ++k) {
      depth.row({twins[r].first, std::to_string(k), groups[k].first, format_number(means[r][k])});
    }
  }
  out.depth_csv = spec.out_dir / "grad_norms_depth.csv";
  write_file_atomic(out.depth_csv, depth.str());

  CsvWriter emb({"step", "embedding_grad_norm_none", "embedding_grad_norm_dpn",
                 "stem_grad_norm_none", "stem_grad_norm_dpn"});
  for (std::size_t i = 0; i < streams[0].size(); ++i) {
    emb.row({std::to_string(streams[0][i].step), format_number(streams[0][i].embedding_grad_norm),
             format_number(streams[1][i].embedding_grad_norm),
             format_number(streams[0][i].group_norms.front().second),
             format_number(streams[1][i].group_norms.front().second)});
  }
  out.embedding_csv = spec.out_dir / "grad_norms_embedding.csv";
  write_file_atomic(out.embedding_csv, emb.str());

  out.stem_ratio = means[0].front() / means[1].front();
  out.embedding_ratio = means[0].back() / means[1].back();
  CsvWriter summary({"metric", "value"});
  summary.row({"window_first_step", std::to_string(first)});
  summary.row({"window_steps", std::to_string(window)});
  summary.row({"stem_grad_norm_ratio_none_over_dpn", format_number(out.stem_ratio)});
  summary.row({"embedding_grad_norm_ratio_none_over_dpn", format_number(out.embedding_ratio)});
  out.summary_csv = spec.out_dir / "grad_norms_summary.csv";
  write_file_atomic(out.summary_csv, summary.str());
  return out;
}

ScaleGrids scale_grids(const ModelConfig& cfg, const ParamTree<double>& params) {
  if (!has_pixel_norm(cfg) || !norm_has_gamma(cfg.stem_norm_op)) {
    throw Error("checkpoint has no learnable pixel-space norm (stem_norm is '" +
                std::string(to_string(cfg.stem_norm)) + "', stem_norm_op is '" +
                std::string(to_string(cfg.stem_norm_op)) + "'; export needs pre or dpn with a "
                "gamma)");
  }
  const auto& gamma = params.at("stem/ln0/gamma");
  if (gamma.size() != cfg.patch_dim()) throw ShapeError("stem/ln0/gamma has the wrong length");
  return ScaleGrids{cfg.patch_size, cfg.channels, gamma.values()};
}

std::string scales_csv(const ScaleGrids& g) {
  CsvWriter csv({"row", "col", "channel", "gamma"});
  for (std::size_t r = 0; r < g.patch; ++r) {
    for (std::size_t c = 0; c < g.patch; ++c) {
      for (std::size_t ch = 0; ch < g.channels; ++ch) {
        csv.row({std::to_string(r), std::to_string(c), std::to_string(ch),
                 format_number(g.at(r, c, ch))});
      }
    }
  }
  return csv.str();
}

ScaleGrids parse_scales_csv(std::string_view text) {
  const CsvTable t = parse_csv(text);
  const std::size_t ir = t.column("row");
  const std::size_t ic = t.column("col");
  const std::size_t ich = t.column("channel");
  const std::size_t iv = t.column("gamma");
  ScaleGrids g;
  for (const auto& row : t.rows) {
    g.patch = std::max(g.patch, static_cast<std::size_t>(parse_number(row[ir])) + 1);
    g.channels = std::max(g.channels, static_cast<std::size_t>(parse_number(row[ich])) + 1);
  }
  if (t.rows.size() != g.patch * g.patch * g.channels) {
    throw Error("scale CSV does not cover a full P x P x C grid");
  }
  g.values.assign(t.rows.size(), 0.0);
  for (const auto& row : t.rows) {
    const auto r = static_cast<std::size_t>(parse_number(row[ir]));
    const auto c = static_cast<std::size_t>(parse_number(row[ic]));
    const auto ch = static_cast<std::size_t>(parse_number(row[ich]));
    g.values[(r * g.patch + c) * g.channels + ch] = parse_number(row[iv]);
  }
  return g;
}

GrayImage channel_image(const ScaleGrids& g, std::size_t channel) {
  if (channel >= g.channels) throw Error("channel out of range");
  double lo = g.at(0, 0, channel);
  double hi = lo;
  for (std::size_t r = 0; r < g.patch; ++r) {
    for (std::size_t c = 0; c < g.patch; ++c) {
      lo = std::min(lo, g.at(r, c, channel));
      hi = std::max(hi, g.at(r, c, channel));
    }
  }
  GrayImage img{g.patch, g.patch, std::vector<std::uint8_t>(g.patch * g.patch, 0)};
  if (hi > lo) {
    for (std::size_t r = 0; r < g.patch; ++r) {
      for (std::size_t c = 0; c < g.patch; ++c) {
        const double u = (g.at(r, c, channel) - lo) / (hi - lo);
        img.pixels[r * g.patch + c] = static_cast<std::uint8_t>(std::lround(255.0 * u));
      }
    }
  }
  return img;
}

ExportOutcome cmd_export_scales(const fs::path& checkpoint, const fs::path& out_dir) {
  ModelConfig cfg;
  const auto params = load_params_as_double(checkpoint, &cfg);
  const ScaleGrids grids = scale_grids(cfg, params);
  ExportOutcome out;
  for (std::size_t ch = 0; ch < grids.channels; ++ch) {
    const fs::path p = out_dir / ("scale_channel" + std::to_string(ch) + ".pgm");
    write_file_atomic(p, encode_pgm(channel_image(grids, ch)));
    out.images.push_back(p);
  }
  out.csv_path = out_dir / "scales.csv";
  write_file_atomic(out.csv_path, scales_csv(grids));
  return out;
}

ModelConfig micro_model_config() {
  ModelConfig m;
  m.image_height = 4;
  m.image_width = 4;
  m.channels = 1;
  m.patch_size = 2;
  m.hidden = 16;
  m.depth = 2;
  m.heads = 2;
  m.mlp_dim = 16;
  m.num_classes = 3;
  return m;
}

GradCheckReport gradient_check_model(const ModelConfig& cfg, std::size_t batch,
                                     std::uint64_t seed, const GradCheckOptions& options) {
  cfg.validate();
  ParamTree<double> params = init_params<double>(cfg, seed, LossKind::sigmoid_xent);
  for (auto& [path, t] : params.entries()) {
    if (is_decayed(path)) continue;
    CounterRng rng(seed + 1, CounterRng::hash(path));
    for (double& v : t.mutable_data()) v += 0.1 * rng.normal();
  }
  CounterRng rng(seed + 2, 0);
  Tensor<double> images(Shape{batch, cfg.image_height, cfg.image_width, cfg.channels});
  for (double& v : images.mutable_data()) v = 2.0 * rng.uniform() - 1.0;
  Tensor<double> targets(Shape{batch, cfg.num_classes});
  for (std::size_t i = 0; i < batch; ++i) targets[i * cfg.num_classes + i % cfg.num_classes] = 1.0;

  std::vector<Tensor<double>> inputs;
  std::vector<std::string> names;
  for (const auto& [path, t] : params) {
    inputs.push_back(t);
    names.push_back(path);
  }
  const ScalarFn f = [&](Graph<double>& g, std::span<const Var<double>> vars) {
    std::vector<std::pair<std::string, Var<double>>> bound;
    for (std::size_t i = 0; i < vars.size(); ++i) bound.emplace_back(names[i], vars[i]);
    const BoundParams<double> bp(std::move(bound));
    const auto logits = vit_forward(g.constant(images), cfg, bp);
    return sigmoid_xent(logits, g.constant(targets));
  };
  return gradient_check(f, inputs, names, options);
}

bool GradCheckOutcome::passed() const {
  return std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.entry.passed; });
}

std::vector<std::string> GradCheckOutcome::failures() const {
  std::vector<std::string> out;
  for (const auto& r : rows) {
    if (!r.entry.passed) out.push_back(r.config + " " + r.entry.name);
  }
  return out;
}

GradCheckOutcome cmd_gradient_check(const GradCheckCommand& options) {
  GradCheckOptions gc;
  gc.step = options.step;
  gc.tolerance = options.tolerance;
  GradCheckOutcome out;
  CsvWriter csv({"config", "param", "elements", "max_rel_error", "max_abs_error", "status"});
  for (StemNorm stem : {StemNorm::none, StemNorm::pre, StemNorm::post, StemNorm::post_posemb,
                        StemNorm::dpn}) {
    for (const auto& [sa, mlp] : placement_grid()) {
      for (BlockExtra extra : {BlockExtra::none, BlockExtra::normformer, BlockExtra::subln}) {
        ModelConfig m = options.model;
        m.stem_norm = stem;
        m.block_sa_ln = sa;
        m.block_mlp_ln = mlp;
        m.block_extra = extra;
        const std::string name = std::string(to_string(stem)) + "/" + std::string(to_string(sa)) +
                                 "/" + std::string(to_string(mlp)) + "/" +
                                 std::string(to_string(extra));
        const auto report = gradient_check_model(m, options.batch, options.seed, gc);
        for (const auto& e : report.entries) {
          csv.row({name, e.name, std::to_string(e.elements), format_number(e.max_rel_error),
                   format_number(e.max_abs_error), e.passed ? "pass" : "FAIL"});
          out.rows.push_back({name, e});
        }
        ++out.configs;
      }
    }
  }
  out.csv_path = options.out_dir / "grad_check.csv";
  write_file_atomic(out.csv_path, csv.str());
  return out;
}

}  // namespace vitlab
