#include "aifind/encoder.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "aifind/binary_io.hpp"
#include "aifind/error.hpp"

namespace aifind {

GateMode GateMode::parse(std::string_view text) {
  if (text == "learnable") return learnable();
  try {
    std::size_t used = 0;
    const std::string s(text);
    const double v = std::stod(s, &used);
    if (used == s.size() && std::isfinite(v)) return fixed(v);
  } catch (const std::exception&) {
  }
  fail(ErrorKind::InvalidInput, "gate must be 'learnable' or a number, got '" + std::string(text) + "'");
}

std::string GateMode::to_string() const {
  if (kind == Kind::learnable) return "learnable";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", scale);
  return buf;
}

void EncoderConfig::validate() const {
  require(patch_size >= 1 && image_side >= 1 && image_side % patch_size == 0, ErrorKind::InvalidInput,
          "patch size must divide the image side");
  require(channels == 1 || channels == 3, ErrorKind::InvalidInput, "encoder channels must be 1 or 3");
  require(d_model >= 1 && heads >= 1 && d_model % heads == 0, ErrorKind::InvalidInput,
          "d_model must be divisible by heads");
  require(layers >= 1 && apa_layers >= 1 && apa_layers <= layers, ErrorKind::InvalidInput,
          "APA layer count must satisfy 1 <= M <= L");
  require(mlp_ratio >= 1, ErrorKind::InvalidInput, "mlp_ratio must be >= 1");
}

namespace {

Mat gaussian(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

AttentionParams init_attention(int d, std::mt19937_64& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  return {gaussian(d, d, s, rng), Mat::Zero(1, d), gaussian(d, d, s, rng), Mat::Zero(1, d),
          gaussian(d, d, s, rng), Mat::Zero(1, d), gaussian(d, d, s, rng), Mat::Zero(1, d)};
}

template <class S, class T>
void collect(S& s, std::vector<T>& out) {
  auto add = [&](std::string name, auto& m) { out.push_back({std::move(name), &m}); };
  auto add_attn = [&](const std::string& prefix, auto& a) {
    add(prefix + ".wq", a.wq);
    add(prefix + ".bq", a.bq);
    add(prefix + ".wk", a.wk);
    add(prefix + ".bk", a.bk);
    add(prefix + ".wv", a.wv);
    add(prefix + ".bv", a.bv);
    add(prefix + ".wo", a.wo);
    add(prefix + ".bo", a.bo);
  };
  add("patch.w", s.patch_w);
  add("patch.b", s.patch_b);
  add("cls", s.cls);
  add("pos", s.pos);
  for (std::size_t l = 0; l < s.layers.size(); ++l) {
    auto& L = s.layers[l];
    const std::string p = "layers." + std::to_string(l);
    add(p + ".ln1.g", L.ln1_g);
    add(p + ".ln1.b", L.ln1_b);
    add_attn(p + ".attn", L.attn);
    add(p + ".ln2.g", L.ln2_g);
    add(p + ".ln2.b", L.ln2_b);
    add(p + ".mlp.w1", L.w1);
    add(p + ".mlp.b1", L.b1);
    add(p + ".mlp.w2", L.w2);
    add(p + ".mlp.b2", L.b2);
    if (L.apa) {
      add_attn(p + ".apa.cross", L.apa->cross);
      add(p + ".apa.gate", L.apa->gate);
    }
  }
  add("lnf.g", s.lnf_g);
  add("lnf.b", s.lnf_b);
}

}  // namespace

EncoderState EncoderState::init(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const int d = cfg.d_model;
  EncoderState s;
  s.config = cfg;
  s.patch_w = gaussian(cfg.patch_dim(), d, 1.0 / std::sqrt(static_cast<double>(cfg.patch_dim())), rng);
  s.patch_b = Mat::Zero(1, d);
  s.cls = gaussian(1, d, 0.02, rng);
  s.pos = gaussian(cfg.tokens(), d, 0.02, rng);
  for (int l = 0; l < cfg.layers; ++l) {
    LayerParams L;
    L.ln1_g = Mat::Ones(1, d);
    L.ln1_b = Mat::Zero(1, d);
    L.attn = init_attention(d, rng);
    L.ln2_g = Mat::Ones(1, d);
    L.ln2_b = Mat::Zero(1, d);
    L.w1 = gaussian(d, cfg.hidden(), 1.0 / std::sqrt(static_cast<double>(d)), rng);
    L.b1 = Mat::Zero(1, cfg.hidden());
    L.w2 = gaussian(cfg.hidden(), d, 1.0 / std::sqrt(static_cast<double>(cfg.hidden())), rng);
    L.b2 = Mat::Zero(1, d);
    if (cfg.has_apa(l)) L.apa = ApaParams{init_attention(d, rng), Mat::Zero(1, d)};
    s.layers.push_back(std::move(L));
  }
  s.lnf_g = Mat::Ones(1, d);
  s.lnf_b = Mat::Zero(1, d);
  return s;
}

EncoderState EncoderState::zeros_like(const EncoderState& other) {
  EncoderState z = other;
  for (auto& t : z.tensors()) t.tensor->setZero();
  return z;
}

std::vector<NamedTensor> EncoderState::tensors() {
  std::vector<NamedTensor> out;
  collect(*this, out);
  return out;
}

std::vector<NamedConstTensor> EncoderState::tensors() const {
  std::vector<NamedConstTensor> out;
  collect(*this, out);
  return out;
}

std::size_t EncoderState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += static_cast<std::size_t>(t.tensor->size());
  return n;
}

std::uint64_t EncoderState::fingerprint() const {
  std::uint64_t h = io::fnv1a(config.gate.to_string());
  for (const auto& t : tensors())
    h = io::fnv1a(std::span<const double>(t.tensor->data(), static_cast<std::size_t>(t.tensor->size())), h);
  return h;
}

bool EncoderState::all_finite() const {
  for (const auto& t : tensors())
    if (!t.tensor->allFinite()) return false;
  return true;
}

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;
}

void EncoderState::save(const std::filesystem::path& path) const {
  io::BinaryWriter w(path);
  w.magic("AIFE");
  w.u32(kCheckpointVersion);
  for (int v : {config.image_side, config.channels, config.patch_size, config.d_model, config.layers, config.heads,
                config.mlp_ratio, config.apa_layers})
    w.u32(static_cast<std::uint32_t>(v));
  w.u8(config.gate.kind == GateMode::Kind::learnable ? 0 : 1);
  w.f64(config.gate.scale);
  const auto ts = tensors();
  w.u32(static_cast<std::uint32_t>(ts.size()));
  for (const auto& t : ts) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.tensor->rows()));
    w.u32(static_cast<std::uint32_t>(t.tensor->cols()));
    w.f64s(std::span<const double>(t.tensor->data(), static_cast<std::size_t>(t.tensor->size())));
  }
  w.close();
}

EncoderState EncoderState::load(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic("AIFE");
  const auto version = r.u32();
  require(version == kCheckpointVersion, ErrorKind::FormatError,
          "unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  EncoderConfig cfg;
  for (int* v : {&cfg.image_side, &cfg.channels, &cfg.patch_size, &cfg.d_model, &cfg.layers, &cfg.heads,
                 &cfg.mlp_ratio, &cfg.apa_layers})
    *v = static_cast<int>(r.u32());
  const auto gate_kind = r.u8();
  const double gate_scale = r.f64();
  require(gate_kind <= 1, ErrorKind::FormatError, "bad gate mode in " + path.string());
  cfg.gate = gate_kind == 0 ? GateMode::learnable() : GateMode::fixed(gate_scale);
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(ErrorKind::FormatError, std::string("checkpoint config invalid: ") + e.what());
  }
  EncoderState s = zeros_like(init(cfg, 0));
  auto ts = s.tensors();
  require(r.u32() == ts.size(), ErrorKind::FormatError, "tensor count does not match config in " + path.string());
  for (auto& t : ts) {
    const auto name = r.str();
    const auto rows = r.u32();
    const auto cols = r.u32();
    require(name == t.name, ErrorKind::FormatError, "expected tensor '" + t.name + "', found '" + name + "'");
    require(rows == t.tensor->rows() && cols == t.tensor->cols(), ErrorKind::FormatError,
            "shape mismatch for tensor '" + name + "'");
    const auto values = r.f64s(static_cast<std::size_t>(rows) * cols);
    std::copy(values.begin(), values.end(), t.tensor->data());
  }
  require(r.at_end(), ErrorKind::FormatError, "trailing bytes in checkpoint " + path.string());
  return s;
}

// ---------------------------------------------------------------------------
// Building blocks

namespace {

constexpr double kLayerNormEps = 1e-5;

Mat linear(const Mat& x, const Mat& w, const Mat& b) {
  Mat y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

void linear_backward(const Mat& x, const Mat& w, const Mat& dy, Mat& dw, Mat& db, Mat* dx) {
  dw.noalias() += x.transpose() * dy;
  db += dy.colwise().sum();
  if (dx) *dx = dy * w.transpose();
}

Mat layer_norm(const Mat& x, const Mat& g, const Mat& b, LayerNormCache& cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  cache.xhat.resize(n, d);
  cache.inv_std.resize(n);
  Mat y(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std(i) = inv;
    cache.xhat.row(i) = (x.row(i).array() - mean) * inv;
    y.row(i) = cache.xhat.row(i).cwiseProduct(g.row(0)) + b.row(0);
  }
  return y;
}

Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache, const Mat& g, Mat& dg, Mat& db) {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  dg += dy.cwiseProduct(cache.xhat).colwise().sum();
  db += dy.colwise().sum();
  Mat dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const RowVec dxhat = dy.row(i).cwiseProduct(g.row(0));
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(cache.xhat.row(i)).mean();
    dx.row(i) = cache.inv_std(i) * (dxhat.array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

void softmax_rows(Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

Mat attention(const Mat& xq, const Mat& xkv, const AttentionParams& p, int heads, AttentionCache* cache) {
  const Eigen::Index d = p.wq.cols();
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat q = linear(xq, p.wq, p.bq);
  Mat k = linear(xkv, p.wk, p.bk);
  Mat v = linear(xkv, p.wv, p.bv);
  Mat ctx(xq.rows(), d);
  std::vector<Mat> probs;
  if (cache) probs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Mat s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    softmax_rows(s);
    ctx.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
    if (cache) probs.push_back(std::move(s));
  }
  Mat out = linear(ctx, p.wo, p.bo);
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->ctx = std::move(ctx);
    cache->probs = std::move(probs);
  }
  return out;
}

// Returns d/dxq; writes d/dxkv when requested.
Mat attention_backward(const Mat& dout, const AttentionCache& c, const AttentionParams& p, AttentionParams& g,
                       int heads, Mat* dxkv) {
  const Eigen::Index d = p.wq.cols();
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat dctx;
  linear_backward(c.ctx, p.wo, dout, g.wo, g.bo, &dctx);
  Mat dq(c.q.rows(), d), dk(c.k.rows(), d), dv(c.v.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const Mat& P = c.probs[static_cast<std::size_t>(h)];
    const auto dctx_h = dctx.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() = P.transpose() * dctx_h;
    Mat dP = dctx_h * c.v.middleCols(h * dh, dh).transpose();
    const Eigen::VectorXd inner = dP.cwiseProduct(P).rowwise().sum();
    Mat dS = P.cwiseProduct(dP.colwise() - inner) * scale;
    dq.middleCols(h * dh, dh).noalias() = dS * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = dS.transpose() * c.q.middleCols(h * dh, dh);
  }
  Mat dxq, dxk, dxv;
  linear_backward(c.xq, p.wq, dq, g.wq, g.bq, &dxq);
  linear_backward(c.xkv, p.wk, dk, g.wk, g.bk, dxkv ? &dxk : nullptr);
  linear_backward(c.xkv, p.wv, dv, g.wv, g.bv, dxkv ? &dxv : nullptr);
  if (dxkv) *dxkv = dxk + dxv;
  return dxq;
}

RowVec effective_gate(const EncoderState& s, const LayerParams& L) {
  if (s.config.gate.kind == GateMode::Kind::learnable) return L.apa->gate.row(0);
  return RowVec::Constant(s.config.d_model, s.config.gate.scale);
}

}  // namespace

Mat cross_attention(const Mat& x, const Mat& s, const AttentionParams& p, int heads) {
  require(s.rows() >= 1, ErrorKind::InvalidInput, "cross-attention needs at least one anchor (disable injection instead)");
  require(x.cols() == p.wq.rows() && s.cols() == p.wk.rows(), ErrorKind::InvalidInput,
          "cross-attention operand widths do not match the projections");
  require(heads >= 1 && p.wq.cols() % heads == 0, ErrorKind::InvalidInput, "head count must divide the model width");
  return attention(x, s, p, heads, nullptr);
}

Mat gated_fuse(const Mat& x, const Mat& x_tilde, const RowVec& gate) {
  require(x.rows() == x_tilde.rows() && x.cols() == x_tilde.cols() && gate.size() == x.cols(),
          ErrorKind::InvalidInput, "gated_fuse shape mismatch");
  Mat out = x_tilde;
  out.array().rowwise() *= gate.array();
  out += x;
  return out;
}

Mat patchify(const Image& img, const EncoderConfig& cfg) {
  require(img.width() == cfg.image_side && img.height() == cfg.image_side, ErrorKind::InvalidInput,
          "image is " + std::to_string(img.width()) + "x" + std::to_string(img.height()) + ", encoder expects " +
              std::to_string(cfg.image_side) + "x" + std::to_string(cfg.image_side));
  require(img.width() % cfg.patch_size == 0, ErrorKind::InvalidInput, "patch size does not divide the image side");
  require(img.channels() == cfg.channels, ErrorKind::InvalidInput, "image channel count does not match the encoder");
  const int ps = cfg.patch_size, g = cfg.grid(), ch = cfg.channels;
  Mat out(cfg.num_patches(), cfg.patch_dim());
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      const int row = gy * g + gx;
      int col = 0;
      for (int py = 0; py < ps; ++py)
        for (int px = 0; px < ps; ++px)
          for (int c = 0; c < ch; ++c) out(row, col++) = img.at(gx * ps + px, gy * ps + py, c);
    }
  return out;
}

Mat anchor_matrix(const std::vector<std::vector<double>>& rows, int dim) {
  Mat m(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i].size() == static_cast<std::size_t>(dim), ErrorKind::InvalidInput,
            "anchor embedding width does not match d_model");
    for (int j = 0; j < dim; ++j) m(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  }
  return m;
}

ForwardResult forward(const Image& img, const Mat& anchors, const EncoderState& state) {
  const auto& cfg = state.config;
  require(anchors.rows() == 0 || anchors.cols() == cfg.d_model, ErrorKind::InvalidInput,
          "anchor width does not match d_model");
  ForwardResult res;
  auto& tr = res.trace;
  tr.fingerprint = state.fingerprint();
  tr.patches = patchify(img, cfg);
  tr.anchors = anchors;

  Mat x(cfg.tokens(), cfg.d_model);
  x.row(0) = state.cls.row(0);
  x.bottomRows(cfg.num_patches()) = linear(tr.patches, state.patch_w, state.patch_b);
  x += state.pos;

  tr.layers.resize(state.layers.size());
  for (std::size_t l = 0; l < state.layers.size(); ++l) {
    const auto& L = state.layers[l];
    auto& c = tr.layers[l];
    const Mat a = layer_norm(x, L.ln1_g, L.ln1_b, c.ln1);
    x += attention(a, a, L.attn, cfg.heads, &c.attn);
    c.b = layer_norm(x, L.ln2_g, L.ln2_b, c.ln2);
    c.hidden_pre = linear(c.b, L.w1, L.b1);
    c.hidden_act = c.hidden_pre.unaryExpr(&gelu);
    x += linear(c.hidden_act, L.w2, L.b2);
    if (L.apa && anchors.rows() > 0) {
      c.injected = true;
      c.gate = effective_gate(state, L);
      c.cross_out = attention(x, anchors, L.apa->cross, cfg.heads, &c.cross);
      x = gated_fuse(x, c.cross_out, c.gate);
    }
  }
  Mat cls_row = x.topRows(1);
  res.feature = layer_norm(cls_row, state.lnf_g, state.lnf_b, tr.lnf).row(0);
  tr.feature = res.feature;
  return res;
}

void backward_into(const ForwardTrace& trace, const EncoderState& state, const RowVec& d_feature,
                   EncoderState& grads, Mat* anchor_grads) {
  const auto& cfg = state.config;
  require(trace.fingerprint == state.fingerprint(), ErrorKind::TraceMismatch,
          "trace was recorded against different parameters");
  require(d_feature.size() == cfg.d_model, ErrorKind::InvalidInput, "upstream gradient width mismatch");
  if (anchor_grads) *anchor_grads = Mat::Zero(trace.anchors.rows(), cfg.d_model);

  Mat dx = Mat::Zero(cfg.tokens(), cfg.d_model);
  dx.row(0) = layer_norm_backward(d_feature, trace.lnf, state.lnf_g, grads.lnf_g, grads.lnf_b).row(0);

  for (std::size_t li = state.layers.size(); li-- > 0;) {
    const auto& L = state.layers[li];
    auto& G = grads.layers[li];
    const auto& c = trace.layers[li];
    if (c.injected) {
      if (cfg.gate.kind == GateMode::Kind::learnable) G.apa->gate += dx.cwiseProduct(c.cross_out).colwise().sum();
      Mat d_tilde = dx;
      d_tilde.array().rowwise() *= c.gate.array();
      Mat d_anchor;
      dx += attention_backward(d_tilde, c.cross, L.apa->cross, G.apa->cross, cfg.heads,
                               anchor_grads ? &d_anchor : nullptr);
      if (anchor_grads) *anchor_grads += d_anchor;
    }
    // MLP sub-block
    Mat d_act;
    linear_backward(c.hidden_act, L.w2, dx, G.w2, G.b2, &d_act);
    Mat d_pre = d_act.cwiseProduct(c.hidden_pre.unaryExpr(&gelu_grad));
    Mat d_b;
    linear_backward(c.b, L.w1, d_pre, G.w1, G.b1, &d_b);
    dx += layer_norm_backward(d_b, c.ln2, L.ln2_g, G.ln2_g, G.ln2_b);
    // attention sub-block
    Mat d_kv;
    Mat d_a = attention_backward(dx, c.attn, L.attn, G.attn, cfg.heads, &d_kv);
    d_a += d_kv;
    dx += layer_norm_backward(d_a, c.ln1, L.ln1_g, G.ln1_g, G.ln1_b);
  }

  grads.pos += dx;
  grads.cls += dx.topRows(1);
  const Mat d_embed = dx.bottomRows(cfg.num_patches());
  linear_backward(trace.patches, state.patch_w, d_embed, grads.patch_w, grads.patch_b, nullptr);
}

EncoderGradients backward(const ForwardTrace& trace, const EncoderState& state, const RowVec& d_feature) {
  EncoderGradients g{EncoderState::zeros_like(state), Mat()};
  backward_into(trace, state, d_feature, g.params, &g.anchors);
  return g;
}

// ---------------------------------------------------------------------------
// Gradient checking

double GradientCheckReport::max_error() const {
  double m = 0.0;
  for (const auto& t : tensors) m = std::max(m, t.max_error);
  return m;
}

double central_difference(const std::function<double()>& loss, Mat& tensor, Eigen::Index flat_index, double h) {
  double& slot = tensor.data()[flat_index];
  const double saved = slot;
  slot = saved + h;
  const double up = loss();
  slot = saved - h;
  const double down = loss();
  slot = saved;
  if (h == 0.0) return up - down;
  return (up - down) / (2.0 * h);
}

double gradient_error(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  if (std::abs(analytic) < kAnalyticFloor) return diff;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

GradientCheckReport check_gradients(const std::vector<NamedTensor>& params, const std::vector<const Mat*>& analytic,
                                    const std::function<double()>& loss, double h) {
  require(params.size() == analytic.size(), ErrorKind::InvalidInput, "gradient check tensor lists differ in length");
  GradientCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Mat& p = *params[t].tensor;
    const Mat& g = *analytic[t];
    require(p.rows() == g.rows() && p.cols() == g.cols(), ErrorKind::InvalidInput,
            "gradient shape mismatch for " + params[t].name);
    TensorCheck tc{params[t].name, static_cast<std::size_t>(p.size()), 0.0};
    for (Eigen::Index i = 0; i < p.size(); ++i)
      tc.max_error = std::max(tc.max_error, gradient_error(g.data()[i], central_difference(loss, p, i, h)));
    report.tensors.push_back(std::move(tc));
  }
  return report;
}

GradientCheckReport gradient_check(EncoderState& state, const Image& img, const Mat& anchors,
                                   const FeatureProbe& probe, double h) {
  auto fwd = forward(img, anchors, state);
  RowVec d_feature(state.config.d_model);
  probe(fwd.feature, d_feature);
  const EncoderGradients grads = backward(fwd.trace, state, d_feature);

  auto loss = [&] {
    RowVec scratch(state.config.d_model);
    return probe(forward(img, anchors, state).feature, scratch);
  };
  std::vector<const Mat*> analytic;
  for (const auto& t : grads.params.tensors()) analytic.push_back(t.tensor);
  return check_gradients(state.tensors(), analytic, loss, h);
}

}  // namespace aifind
