#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aifind/image.hpp"

namespace aifind {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::RowVectorXd;

/// APA gate: a learnable vector g (initialised to 0) or a constant scale.
struct GateMode {
  enum class Kind { learnable, fixed };
  Kind kind = Kind::learnable;
  double scale = 0.0;

  static GateMode learnable() { return {}; }
  static GateMode fixed(double s) { return {Kind::fixed, s}; }
  static GateMode parse(std::string_view text);  // "learnable" or a number
  std::string to_string() const;

  friend bool operator==(const GateMode&, const GateMode&) = default;
};

struct EncoderConfig {
  int image_side = 64;
  int channels = 3;
  int patch_size = 8;
  int d_model = 32;
  int layers = 4;
  int heads = 4;
  int mlp_ratio = 4;
  int apa_layers = 2;  // APA sits in the top `apa_layers` layers
  GateMode gate;

  void validate() const;
  int grid() const { return image_side / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int tokens() const { return num_patches() + 1; }  // class token first
  int patch_dim() const { return patch_size * patch_size * channels; }
  int head_dim() const { return d_model / heads; }
  int hidden() const { return d_model * mlp_ratio; }
  bool has_apa(int layer) const { return layer >= layers - apa_layers; }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct AttentionParams {
  Mat wq, bq, wk, bk, wv, bv, wo, bo;
};

struct ApaParams {
  AttentionParams cross;
  Mat gate;  // 1 x D; read only in learnable mode
};

struct LayerParams {
  Mat ln1_g, ln1_b;
  AttentionParams attn;
  Mat ln2_g, ln2_b;
  Mat w1, b1, w2, b2;
  std::optional<ApaParams> apa;
};

struct NamedTensor {
  std::string name;
  Mat* tensor;
};
struct NamedConstTensor {
  std::string name;
  const Mat* tensor;
};

/// Encoder parameters. Also used as the gradient container (same layout).
class EncoderState {
 public:
  EncoderConfig config;
  Mat patch_w, patch_b, cls, pos;
  std::vector<LayerParams> layers;
  Mat lnf_g, lnf_b;

  static EncoderState init(const EncoderConfig& cfg, std::uint64_t seed);
  static EncoderState zeros_like(const EncoderState& other);

  /// Every tensor in declaration order; names are stable and used by checkpoints.
  std::vector<NamedTensor> tensors();
  std::vector<NamedConstTensor> tensors() const;

  std::size_t parameter_count() const;
  std::uint64_t fingerprint() const;
  bool all_finite() const;

  void save(const std::filesystem::path& path) const;
  static EncoderState load(const std::filesystem::path& path);
};

// Cached intermediates for exact reverse-mode differentiation.
struct LayerNormCache {
  Mat xhat;
  Eigen::VectorXd inv_std;
};

struct AttentionCache {
  Mat xq, xkv, q, k, v, ctx;
  std::vector<Mat> probs;  // per head, Tq x Tk
};

struct LayerCache {
  LayerNormCache ln1;
  AttentionCache attn;
  LayerNormCache ln2;
  Mat b, hidden_pre, hidden_act;
  bool injected = false;
  AttentionCache cross;
  Mat cross_out;  // X~ before gating
  RowVec gate;    // effective gate used
};

struct ForwardTrace {
  std::uint64_t fingerprint = 0;
  Mat patches;  // P x patch_dim
  Mat anchors;  // N x D (0 rows when injection is disabled)
  std::vector<LayerCache> layers;
  LayerNormCache lnf;
  RowVec feature;
};

struct ForwardResult {
  RowVec feature;
  ForwardTrace trace;
};

struct EncoderGradients {
  EncoderState params;
  Mat anchors;  // d loss / d anchor rows; informational, never applied
};

/// Multi-head attention with queries from `x` and keys/values from `s`.
Mat cross_attention(const Mat& x, const Mat& s, const AttentionParams& p, int heads);

/// x + g (.) x~, with g broadcast over rows.
Mat gated_fuse(const Mat& x, const Mat& x_tilde, const RowVec& gate);

/// Flattens the image into P x patch_dim rows (row-major patches, (py, px, c) inside each).
Mat patchify(const Image& img, const EncoderConfig& cfg);

/// `anchors` is N x D; pass an empty matrix to disable injection.
ForwardResult forward(const Image& img, const Mat& anchors, const EncoderState& state);

EncoderGradients backward(const ForwardTrace& trace, const EncoderState& state, const RowVec& d_feature);
/// Accumulating variant: adds parameter gradients into `grads`.
void backward_into(const ForwardTrace& trace, const EncoderState& state, const RowVec& d_feature,
                   EncoderState& grads, Mat* anchor_grads = nullptr);

Mat anchor_matrix(const std::vector<std::vector<double>>& rows, int dim);

// Finite-difference gradient checking.
struct TensorCheck {
  std::string name;
  std::size_t size = 0;
  double max_error = 0.0;  // relative, or absolute where |analytic| < 1e-8
};

struct GradientCheckReport {
  std::vector<TensorCheck> tensors;
  double max_error() const;
};

inline constexpr double kFiniteDifferenceStep = 1e-5;
inline constexpr double kAnalyticFloor = 1e-8;

/// Central difference of `loss` w.r.t. one element of `tensor`; restores the element.
double central_difference(const std::function<double()>& loss, Mat& tensor, Eigen::Index flat_index, double h);

double gradient_error(double analytic, double numeric);

/// Compares analytic gradients against central differences for each tensor.
/// `params[i]` and `analytic[i]` must share a shape.
GradientCheckReport check_gradients(const std::vector<NamedTensor>& params,
                                    const std::vector<const Mat*>& analytic,
                                    const std::function<double()>& loss, double h = kFiniteDifferenceStep);

/// Scalar probe on the pooled feature: returns the loss and writes dL/dF.
using FeatureProbe = std::function<double(const RowVec& feature, RowVec& d_feature)>;

GradientCheckReport gradient_check(EncoderState& state, const Image& img, const Mat& anchors,
                                   const FeatureProbe& probe, double h = kFiniteDifferenceStep);

}  // namespace aifind
