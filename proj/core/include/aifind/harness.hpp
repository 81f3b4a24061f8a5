#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "aifind/anchors.hpp"
#include "aifind/encoder.hpp"
#include "aifind/harmonizer.hpp"
#include "aifind/kv_config.hpp"
#include "aifind/trainer.hpp"

namespace aifind {

/// One artifact injected into fakes: which channel, and how strong.
struct RecipeItem {
  Channel channel;
  double intensity;
};

struct SyntheticSpec {
  int image_side = 64;
  int patch_size = 8;
  int train_per_class = 200;
  int test_per_class = 100;
  std::uint64_t seed = 0;
  /// Recipe for task k is recipes[k]; tasks beyond the list use default_recipe(k).
  std::vector<std::vector<RecipeItem>> recipes;

  std::vector<RecipeItem> recipe_for(int task_index) const;
  void validate() const;
};

std::vector<RecipeItem> default_recipe(int task_index);

/// Fixed rectangular facial layout scaled to the image side.
RegionMaskSet synthetic_masks(int side);

/// A smooth, lightly textured synthetic "face" (quantized to 8-bit levels).
Image synth_real_face(int side, std::uint64_t seed);

/// Applies the recipe inside its regions; deterministic in `seed`.
Image apply_recipe(const Image& real, const RegionMaskSet& masks, const std::vector<RecipeItem>& recipe,
                   std::uint64_t seed);

struct TaskDataset {
  int task_index = 0;
  std::shared_ptr<const RegionMaskSet> masks;
  std::vector<TrainSample> train;
  std::vector<TrainSample> test;
};

/// Fits the channel normalizer on the training reals and fills anomaly scores on both splits.
void attach_anomaly_scores(TaskDataset& data);

TaskDataset gen_synthetic_task(const SyntheticSpec& spec, int task_index);

void save_dataset(const TaskDataset& data, const std::filesystem::path& dir);
TaskDataset load_dataset(const std::filesystem::path& dir);

/// Mann-Whitney AUC with average ranks for ties.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Self-contained anchor library for the synthetic harness, built through
/// anchor selection over toy candidates. For D < 40 the toy embeddings are
/// mapped to D dimensions by a fixed random projection.
std::shared_ptr<const AnchorLibrary> harness_library(std::size_t dim, std::uint64_t seed);
void harness_candidates(std::size_t dim, std::uint64_t seed, CandidateSets& candidates, SupportSets& supports);

/// Derived seed for one protocol stage (1: library, 2: encoder init, 3: heads init, 10+t: task t training).
std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage);

struct Ablations {
  bool no_adh = false;
  bool no_apa = false;
  bool no_ind = false;
};

struct ProtocolConfig {
  int tasks = 2;
  SyntheticSpec data;
  EncoderConfig encoder;
  TrainConfig train;
  HarmonizerOptions harmonizer;
  Ablations ablations;
  std::uint64_t seed = 0;

  /// Reads every recognised key; unknown keys are rejected.
  static ProtocolConfig from_kv(const KeyValueFile& kv);
  KeyValueFile to_kv() const;
  /// Propagates the run seed and ablations into the nested configs.
  ProtocolConfig resolved() const;
  std::string hash() const;
};

struct StageTiming {
  std::string stage;
  double seconds;
};

struct ProtocolResult {
  std::vector<std::vector<double>> auc;  // auc[s][e], e <= s, 0-based
  std::vector<double> averages;          // mean of row s
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string config_echo;
  std::vector<StageTiming> timings;
  std::vector<std::vector<TrainLogRow>> logs;
};

/// Scores a split with the binary head's fake probability. Anchors are
/// retrieved label-free (max summed cosine over both polarities).
std::vector<double> score_split(const std::vector<TrainSample>& split, const EncoderState& encoder,
                                const Heads& heads, const AnchorLibrary& lib, int n_anchors, bool inject);
double evaluate_split(const std::vector<TrainSample>& split, const EncoderState& encoder, const Heads& heads,
                      const AnchorLibrary& lib, int n_anchors, bool inject);

using ProgressFn = std::function<void(const std::string&)>;

ProtocolResult run_protocol(const ProtocolConfig& cfg, const ProgressFn& progress = {});

/// Writes results.csv (after_task,eval_task,auc) and manifest.txt under `dir`.
void report(const ProtocolResult& result, const std::filesystem::path& dir);

}  // namespace aifind
