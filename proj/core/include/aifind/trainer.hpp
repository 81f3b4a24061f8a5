#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "aifind/anchors.hpp"
#include "aifind/encoder.hpp"
#include "aifind/indicators.hpp"
#include "aifind/kv_config.hpp"

namespace aifind {

using IndVector = std::array<std::uint8_t, kDimensionCount>;

/// Binary head C_t (2 x D) and multi-label artifact head H_t (5 x D).
struct Heads {
  Mat bin_w, bin_b;
  Mat ml_w, ml_b;

  static Heads init(int dim, std::uint64_t seed);
  static Heads zeros_like(const Heads& other);

  int dim() const { return static_cast<int>(bin_w.cols()); }
  RowVec binary_logits(const RowVec& feature) const;
  RowVec multilabel_logits(const RowVec& feature) const;
  /// Softmax probability of the fake class.
  double fake_probability(const RowVec& feature) const;

  std::vector<NamedTensor> tensors();
  std::vector<NamedConstTensor> tensors() const;

  void save(const std::filesystem::path& path) const;
  static Heads load(const std::filesystem::path& path);
};

struct TrainSample {
  std::string id;
  Image image;
  std::shared_ptr<const RegionMaskSet> masks;
  Label label = Label::real;
  IndVector y_ind{};  // ground-truth artifact dimensions; zero for reals
  IndicatorMatrix indicators;  // with anomaly scores
};

struct TrainConfig {
  int epochs = 20;
  int batch = 32;
  double lr = 8e-5;
  double mu1 = 0.1;
  double mu2 = 1.0;
  int n_anchors = 3;
  int warmup = 5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  bool inject = true;  // false: APA disabled, anchors still drive the multi-label target

  void validate() const;
  /// Overrides defaults with any of: epochs, batch, lr, mu1, mu2, n_anchors, n_warmup, seed.
  static TrainConfig from_kv(const KeyValueFile& kv);
};

/// Frozen previous-task encoder and library (teacher for distillation).
struct TaskSnapshot {
  std::shared_ptr<const EncoderState> encoder;
  std::shared_ptr<const AnchorLibrary> library;
};

IndVector make_ind_target(Label label, const std::vector<MatchedAnchor>& matched);

double loss_cls(const RowVec& logits, Label y, RowVec* d_logits = nullptr);
double loss_ind(const RowVec& logits, const IndVector& y, RowVec* d_logits = nullptr);
double loss_dis(const RowVec& current, const RowVec& previous, RowVec* d_current = nullptr);
double loss_total(double l_cls, double l_ind, double l_dis, double mu1, double mu2);

enum class AnchorPhase { fixed, dynamic, fixed_fallback };

struct AnchorSelection {
  std::vector<MatchedAnchor> anchors;
  AnchorPhase phase;
};

/// Epochs are 1-based: epoch <= warm-up uses indicator-ranked anchors, later
/// epochs retrieve by cosine against the injection-free pooled feature.
AnchorSelection select_anchors_for_step(int epoch, const TrainSample& sample, const EncoderState& encoder,
                                        const AnchorLibrary& lib, const TrainConfig& cfg);

Mat anchor_rows(const std::vector<MatchedAnchor>& matched, int dim);

struct ObjectiveTerms {
  double total = 0, cls = 0, ind = 0, dis = 0;
};

/// Full per-sample objective. When gradient sinks are given, adds
/// `weight * d(total)/d(param)` into them.
ObjectiveTerms sample_objective(const EncoderState& encoder, const Heads& heads, const Image& image,
                                const Mat& anchors, Label label, const IndVector& y_ind, const RowVec* teacher,
                                double mu1, double mu2, EncoderState* encoder_grads = nullptr,
                                Heads* head_grads = nullptr, double weight = 1.0);

/// Finite-difference check of the full objective over encoder and head tensors.
GradientCheckReport check_objective_gradients(EncoderState& encoder, Heads& heads, const Image& image,
                                              const Mat& anchors, Label label, const IndVector& y_ind,
                                              const RowVec* teacher, double mu1, double mu2,
                                              double h = kFiniteDifferenceStep);

/// Adaptive-moment optimizer over a fixed list of tensors.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<NamedTensor>& params, const std::vector<const Mat*>& grads);
  long long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<Mat> m_, v_;
};

struct TrainLogRow {
  int epoch;
  int batch;
  double loss_total, loss_cls, loss_ind, loss_dis;
};

struct TaskOutcome {
  EncoderState encoder;
  Heads heads;
  TaskSnapshot snapshot;
  std::vector<TrainLogRow> log;
};

TaskOutcome train_task(const std::vector<TrainSample>& data, EncoderState encoder, Heads heads,
                       const TaskSnapshot* previous, std::shared_ptr<const AnchorLibrary> lib,
                       const TrainConfig& cfg);

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path);

}  // namespace aifind
