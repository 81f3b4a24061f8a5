#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "aifind/trainer.hpp"

namespace aifind {

enum class HeadKind : std::uint8_t { binary = 0, multilabel = 1 };

/// A head weight matrix flattened row-major (bias excluded), stored as a unit
/// direction plus its original norm.
struct HeadVector {
  Eigen::VectorXd flat;
  double norm = 0.0;
  HeadKind kind = HeadKind::binary;
  std::uint32_t task_id = 0;

  static HeadVector from_weight(const Mat& weight, HeadKind kind, std::uint32_t task_id);
};

class TaskHeadArchive {
 public:
  static constexpr double kUnitTolerance = 1e-9;

  explicit TaskHeadArchive(HeadKind kind) : kind_(kind) {}

  HeadKind kind() const { return kind_; }
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<HeadVector>& entries() const { return entries_; }

  /// Validates kind, unit length and dimension before appending.
  void append(HeadVector entry);

 private:
  HeadKind kind_;
  std::vector<HeadVector> entries_;
};

/// Softmax over archived directions of cos(current, W_j) / tau.
Eigen::VectorXd affinity_weights(const Eigen::VectorXd& current, const TaskHeadArchive& archive, double tau);

/// normalize(sum_j omega_j W_j).
Eigen::VectorXd global_reference(const TaskHeadArchive& archive, const Eigen::VectorXd& omega);

/// clamp(cos(current, reference), 0, 1).
double adaptive_t(const Eigen::VectorXd& current, const Eigen::VectorXd& reference);

/// Geodesic interpolation on the unit sphere.
Eigen::VectorXd slerp(const Eigen::VectorXd& from, const Eigen::VectorXd& to, double t);

Eigen::VectorXd rescale(const Eigen::VectorXd& aligned, double original_norm);

enum class AlignMethod { slerp, lerp, ema, wm };
AlignMethod parse_align_method(std::string_view s);
std::string_view to_string(AlignMethod m);

struct HarmonizerOptions {
  AlignMethod method = AlignMethod::slerp;
  double tau = 0.1;
  double ema_alpha = 0.9;
};

/// New unit direction for one head given its history (history must be non-empty).
Eigen::VectorXd align_direction(const Eigen::VectorXd& current, const TaskHeadArchive& archive,
                                const HarmonizerOptions& opts);

struct HeadArchives {
  TaskHeadArchive binary{HeadKind::binary};
  TaskHeadArchive multilabel{HeadKind::multilabel};

  void save(const std::filesystem::path& path) const;
  static HeadArchives load(const std::filesystem::path& path);
};

/// Aligns both head weight matrices toward their history (biases untouched)
/// and appends the resulting directions. With empty history the heads are
/// returned unchanged. On error neither heads nor archives are modified.
Heads harmonize(const Heads& heads, HeadArchives& archives, std::uint32_t task_id, const HarmonizerOptions& opts);

}  // namespace aifind
