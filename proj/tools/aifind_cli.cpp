// aifind command-line front end: indicator extraction, anchor libraries,
// synthetic data, per-task training, evaluation and the full protocol.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "aifind/anchors.hpp"
#include "aifind/error.hpp"
#include "aifind/harmonizer.hpp"
#include "aifind/harness.hpp"
#include "aifind/indicators.hpp"
#include "aifind/kv_config.hpp"
#include "aifind/trainer.hpp"

namespace fs = std::filesystem;
using namespace aifind;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string align;
  std::string gate;
  bool no_adh = false;
  bool no_apa = false;
  bool no_ind = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key=value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "run seed (u64)");
  cmd->add_option("--out", f.out, "output path");
  cmd->add_option("--align", f.align, "head alignment method")
      ->check(CLI::IsMember({"slerp", "lerp", "ema", "wm"}));
  cmd->add_option("--gate", f.gate, "APA gate: learnable or a fixed scale")
      ->check(CLI::IsMember({"learnable", "0.01", "0.1", "1"}));
  cmd->add_flag("--no-adh", f.no_adh, "skip head harmonization");
  cmd->add_flag("--no-apa", f.no_apa, "disable anchor injection");
  cmd->add_flag("--no-ind", f.no_ind, "drop the artifact-indicator loss (mu1 = 0)");
}

ProtocolConfig load_config(const CommonFlags& f) {
  ProtocolConfig cfg = f.config.empty() ? ProtocolConfig{} : ProtocolConfig::from_kv(KeyValueFile::load(f.config));
  if (f.seed) cfg.seed = *f.seed;
  if (!f.align.empty()) cfg.harmonizer.method = parse_align_method(f.align);
  if (!f.gate.empty()) cfg.encoder.gate = GateMode::parse(f.gate);
  cfg.ablations.no_adh = cfg.ablations.no_adh || f.no_adh;
  cfg.ablations.no_apa = cfg.ablations.no_apa || f.no_apa;
  cfg.ablations.no_ind = cfg.ablations.no_ind || f.no_ind;
  return cfg.resolved();
}

fs::path require_out(const CommonFlags& f) {
  require(!f.out.empty(), ErrorKind::InvalidInput, "--out is required");
  return f.out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  require(fp != nullptr, ErrorKind::IOError, "cannot write " + path.string());
  const bool ok = std::fwrite(text.data(), 1, text.size(), fp) == text.size();
  require(std::fclose(fp) == 0 && ok, ErrorKind::IOError, "write failed: " + path.string());
}

// --- extract -----------------------------------------------------------------

int cmd_extract(const CommonFlags& f, const std::string& manifest, const std::vector<std::string>& images) {
  const RegionMaskSet masks = load_mask_manifest(manifest);
  std::vector<IndicatorMatrix> rows;
  for (const auto& p : images) rows.push_back(compute_indicator_matrix(load_pnm(p), masks, fs::path(p).stem().string()));
  if (rows.size() >= 2) {
    const auto norm = ChannelNormalizer::fit(rows);
    for (auto& r : rows) r = anomaly_scores(std::move(r), norm);
  }
  write_indicator_csv(rows, require_out(f));
  std::printf("wrote %zu indicator matrices to %s\n", rows.size(), f.out.c_str());
  return 0;
}

// --- build-anchors -----------------------------------------------------------

int cmd_build_anchors(const CommonFlags& f, const std::string& cand, const std::string& support, int toy_dim) {
  const fs::path out = require_out(f);
  fs::create_directories(out);
  CandidateSets candidates;
  SupportSets supports;
  if (toy_dim > 0) {
    harness_candidates(static_cast<std::size_t>(toy_dim), f.seed.value_or(0), candidates, supports);
    save_candidates(candidates, out / "candidates.txt", out / "candidates.bin");
    save_supports(supports, out / "support.txt", out / "support.bin");
  } else {
    require(!cand.empty() && !support.empty(), ErrorKind::InvalidInput,
            "--candidates and --support are required unless --toy-dim is given");
    candidates = load_candidates(cand, fs::path(cand).replace_extension(".bin"));
    supports = load_supports(support, fs::path(support).replace_extension(".bin"));
  }
  const AnchorLibrary lib = build_library(candidates, supports);
  save_library(lib, out / "library.txt", out / "library.bin");
  std::printf("library: %zu channels, dim %zu -> %s\n", lib.anchors().size(), lib.dim(), out.string().c_str());
  return 0;
}

// --- gen -----------------------------------------------------------------------

int cmd_gen(const CommonFlags& f) {
  const ProtocolConfig cfg = load_config(f);
  const fs::path out = require_out(f);
  for (int t = 0; t < cfg.tasks; ++t) {
    const TaskDataset data = gen_synthetic_task(cfg.data, t);
    save_dataset(data, out / ("task" + std::to_string(t + 1)));
  }
  write_text(out / "config.txt", cfg.to_kv().canonical());
  std::printf("generated %d task(s) under %s\n", cfg.tasks, out.string().c_str());
  return 0;
}

// --- train / eval --------------------------------------------------------------

std::shared_ptr<const AnchorLibrary> load_ckpt_library(const fs::path& dir) {
  return std::make_shared<const AnchorLibrary>(load_library(dir / "library.txt", dir / "library.bin"));
}

int cmd_train(const CommonFlags& f, const std::string& data_dir, const std::string& prev_dir) {
  const ProtocolConfig cfg = load_config(f);
  const fs::path out = require_out(f);
  const TaskDataset data = load_dataset(data_dir);

  std::shared_ptr<const AnchorLibrary> lib;
  std::optional<TaskSnapshot> snapshot;
  HeadArchives archives;
  EncoderState encoder;
  Heads heads;
  if (prev_dir.empty()) {
    lib = harness_library(static_cast<std::size_t>(cfg.encoder.d_model), stage_seed(cfg.seed, 1));
    encoder = EncoderState::init(cfg.encoder, stage_seed(cfg.seed, 2));
    heads = Heads::init(cfg.encoder.d_model, stage_seed(cfg.seed, 3));
  } else {
    const fs::path prev(prev_dir);
    lib = load_ckpt_library(prev);
    encoder = EncoderState::load(prev / "encoder.aife");
    require(encoder.config.d_model == cfg.encoder.d_model, ErrorKind::InvalidInput,
            "previous checkpoint was trained with a different d_model");
    heads = Heads::load(prev / "heads.aifk");
    archives = HeadArchives::load(prev / "archive.aifh");
    snapshot = TaskSnapshot{std::make_shared<const EncoderState>(encoder), lib};
  }

  TrainConfig tc = cfg.train;
  tc.seed = stage_seed(cfg.seed, 10 + static_cast<std::uint64_t>(data.task_index));
  auto outcome = train_task(data.train, std::move(encoder), std::move(heads), snapshot ? &*snapshot : nullptr, lib, tc);
  Heads final_heads = outcome.heads;
  if (!cfg.ablations.no_adh)
    final_heads = harmonize(final_heads, archives, static_cast<std::uint32_t>(data.task_index + 1), cfg.harmonizer);

  fs::create_directories(out);
  outcome.encoder.save(out / "encoder.aife");
  final_heads.save(out / "heads.aifk");
  save_library(*lib, out / "library.txt", out / "library.bin");
  archives.save(out / "archive.aifh");
  write_train_log(outcome.log, out / "train_log.csv");
  write_text(out / "config.txt", cfg.to_kv().canonical());
  const auto& last = outcome.log.back();
  std::printf("task %d trained: final batch loss %s -> %s\n", data.task_index + 1,
              format_fixed6(last.loss_total).c_str(), out.string().c_str());
  return 0;
}

int cmd_eval(const CommonFlags& f, const std::string& ckpt_dir, const std::string& data_dir, const std::string& split) {
  const ProtocolConfig cfg = load_config(f);
  const fs::path ckpt(ckpt_dir);
  const EncoderState encoder = EncoderState::load(ckpt / "encoder.aife");
  const Heads heads = Heads::load(ckpt / "heads.aifk");
  const auto lib = load_ckpt_library(ckpt);
  const TaskDataset data = load_dataset(data_dir);
  const auto& samples = split == "train" ? data.train : data.test;
  const double value = evaluate_split(samples, encoder, heads, *lib, cfg.train.n_anchors, cfg.train.inject);
  std::printf("auc=%s\n", format_fixed6(value).c_str());
  return 0;
}

// --- run -----------------------------------------------------------------------

int cmd_run(const CommonFlags& f, bool quiet) {
  const ProtocolConfig cfg = load_config(f);
  const fs::path out = require_out(f);
  ProgressFn progress;
  if (!quiet) progress = [](const std::string& msg) { std::fprintf(stderr, "[aifind] %s\n", msg.c_str()); };
  const ProtocolResult result = run_protocol(cfg, progress);
  report(result, out);
  for (std::size_t s = 0; s < result.auc.size(); ++s) {
    std::printf("after task %zu:", s + 1);
    for (double v : result.auc[s]) std::printf(" %s", format_fixed6(v).c_str());
    std::printf("  avg %s\n", format_fixed6(result.averages[s]).c_str());
  }
  std::printf("config_hash=%s\n", result.config_hash.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aifind: incremental face-forgery detection toolkit"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* extract = app.add_subcommand("extract", "images + region masks -> indicator CSV");
  std::string manifest;
  std::vector<std::string> images;
  extract->add_option("--masks", manifest, "mask manifest (masks.txt)")->required()->check(CLI::ExistingFile);
  extract->add_option("images", images, "PGM/PPM images")->required()->check(CLI::ExistingFile);
  add_common(extract, flags);

  auto* anchors = app.add_subcommand("build-anchors", "candidates + support set -> anchor library");
  std::string cand_index, support_index;
  int toy_dim = 0;
  anchors->add_option("--candidates", cand_index, "candidate index (sidecar: same stem, .bin)");
  anchors->add_option("--support", support_index, "support index (sidecar: same stem, .bin)");
  anchors->add_option("--toy-dim", toy_dim, "generate toy candidates of this dimension instead")->check(CLI::PositiveNumber);
  add_common(anchors, flags);

  auto* gen = app.add_subcommand("gen", "write synthetic task datasets");
  add_common(gen, flags);

  auto* train = app.add_subcommand("train", "train one task and write a checkpoint directory");
  std::string data_dir, prev_dir;
  train->add_option("--data", data_dir, "task dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--prev", prev_dir, "checkpoint of the previous task")->check(CLI::ExistingDirectory);
  add_common(train, flags);

  auto* run = app.add_subcommand("run", "full incremental protocol");
  bool quiet = false;
  run->add_flag("--quiet", quiet, "no progress on stderr");
  add_common(run, flags);

  auto* eval = app.add_subcommand("eval", "checkpoint + dataset -> AUC");
  std::string ckpt_dir, eval_data, split = "test";
  eval->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--data", eval_data, "task dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  add_common(eval, flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*extract) return cmd_extract(flags, manifest, images);
    if (*anchors) return cmd_build_anchors(flags, cand_index, support_index, toy_dim);
    if (*gen) return cmd_gen(flags);
    if (*train) return cmd_train(flags, data_dir, prev_dir);
    if (*run) return cmd_run(flags, quiet);
    if (*eval) return cmd_eval(flags, ckpt_dir, eval_data, split);
  } catch (const Error& e) {
    std::fprintf(stderr, "aifind: %s\n", e.what());
    return e.kind() == ErrorKind::IOError ? 3 : 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "aifind: %s\n", e.what());
    return 1;
  }
  return 0;
}
