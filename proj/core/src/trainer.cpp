#include "aifind/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "aifind/binary_io.hpp"
#include "aifind/error.hpp"

namespace aifind {

// ---------------------------------------------------------------------------
// Heads

Heads Heads::init(int dim, std::uint64_t seed) {
  require(dim >= 1, ErrorKind::InvalidInput, "head dimension must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  Heads h;
  h.bin_w.resize(2, dim);
  h.ml_w.resize(static_cast<Eigen::Index>(kDimensionCount), dim);
  for (Eigen::Index i = 0; i < h.bin_w.size(); ++i) h.bin_w.data()[i] = dist(rng);
  for (Eigen::Index i = 0; i < h.ml_w.size(); ++i) h.ml_w.data()[i] = dist(rng);
  h.bin_b = Mat::Zero(1, 2);
  h.ml_b = Mat::Zero(1, static_cast<Eigen::Index>(kDimensionCount));
  return h;
}

Heads Heads::zeros_like(const Heads& other) {
  Heads z = other;
  for (auto& t : z.tensors()) t.tensor->setZero();
  return z;
}

RowVec Heads::binary_logits(const RowVec& feature) const {
  return feature * bin_w.transpose() + bin_b.row(0);
}

RowVec Heads::multilabel_logits(const RowVec& feature) const {
  return feature * ml_w.transpose() + ml_b.row(0);
}

double Heads::fake_probability(const RowVec& feature) const {
  const RowVec z = binary_logits(feature);
  return 1.0 / (1.0 + std::exp(z(0) - z(1)));
}

std::vector<NamedTensor> Heads::tensors() {
  return {{"heads.bin.w", &bin_w}, {"heads.bin.b", &bin_b}, {"heads.ml.w", &ml_w}, {"heads.ml.b", &ml_b}};
}

std::vector<NamedConstTensor> Heads::tensors() const {
  return {{"heads.bin.w", &bin_w}, {"heads.bin.b", &bin_b}, {"heads.ml.w", &ml_w}, {"heads.ml.b", &ml_b}};
}

void Heads::save(const std::filesystem::path& path) const {
  io::BinaryWriter w(path);
  w.magic("AIFK");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(dim()));
  for (const auto& t : tensors()) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.tensor->rows()));
    w.u32(static_cast<std::uint32_t>(t.tensor->cols()));
    w.f64s(std::span<const double>(t.tensor->data(), static_cast<std::size_t>(t.tensor->size())));
  }
  w.close();
}

Heads Heads::load(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic("AIFK");
  require(r.u32() == 1, ErrorKind::FormatError, "unsupported heads version in " + path.string());
  const auto dim = static_cast<int>(r.u32());
  require(dim >= 1, ErrorKind::FormatError, "heads dimension is zero in " + path.string());
  Heads h = zeros_like(init(dim, 0));
  for (auto& t : h.tensors()) {
    const auto name = r.str();
    const auto rows = r.u32();
    const auto cols = r.u32();
    require(name == t.name && rows == t.tensor->rows() && cols == t.tensor->cols(), ErrorKind::FormatError,
            "unexpected tensor '" + name + "' in " + path.string());
    const auto v = r.f64s(static_cast<std::size_t>(rows) * cols);
    std::copy(v.begin(), v.end(), t.tensor->data());
  }
  require(r.at_end(), ErrorKind::FormatError, "trailing bytes in " + path.string());
  return h;
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  require(epochs >= 1 && batch >= 1, ErrorKind::InvalidInput, "epochs and batch must be >= 1");
  require(warmup >= 0 && warmup <= epochs, ErrorKind::InvalidInput, "warm-up must satisfy 0 <= n <= epochs");
  require(mu1 >= 0 && mu2 >= 0, ErrorKind::InvalidInput, "loss weights must be non-negative");
  require(lr >= 0, ErrorKind::InvalidInput, "learning rate must be non-negative");
  require(n_anchors >= 1 && n_anchors <= static_cast<int>(kChannelCount), ErrorKind::InvalidInput,
          "n_anchors must be in [1, 18]");
}

TrainConfig TrainConfig::from_kv(const KeyValueFile& kv) {
  TrainConfig c;
  if (kv.contains("epochs")) c.epochs = static_cast<int>(kv.get_int("epochs"));
  if (kv.contains("batch")) c.batch = static_cast<int>(kv.get_int("batch"));
  if (kv.contains("lr")) c.lr = kv.get_double("lr");
  if (kv.contains("mu1")) c.mu1 = kv.get_double("mu1");
  if (kv.contains("mu2")) c.mu2 = kv.get_double("mu2");
  if (kv.contains("n_anchors")) c.n_anchors = static_cast<int>(kv.get_int("n_anchors"));
  if (kv.contains("n_warmup")) c.warmup = static_cast<int>(kv.get_int("n_warmup"));
  if (kv.contains("seed")) c.seed = static_cast<std::uint64_t>(kv.get_int("seed"));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Targets and losses

IndVector make_ind_target(Label label, const std::vector<MatchedAnchor>& matched) {
  IndVector y{};
  if (label == Label::real) return y;
  for (const auto& m : matched) y[static_cast<std::size_t>(m.channel.dimension)] = 1;
  return y;
}

double loss_cls(const RowVec& logits, Label y, RowVec* d_logits) {
  require(logits.size() == 2, ErrorKind::InvalidInput, "binary logits must have 2 entries");
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  const int k = static_cast<int>(y);
  if (d_logits) {
    *d_logits = (logits.array() - lse).exp();
    (*d_logits)(k) -= 1.0;
  }
  return lse - logits(k);
}

double loss_ind(const RowVec& logits, const IndVector& y, RowVec* d_logits) {
  require(logits.size() == static_cast<Eigen::Index>(kDimensionCount), ErrorKind::InvalidInput,
          "multi-label logits must have 5 entries");
  const double n = static_cast<double>(kDimensionCount);
  double sum = 0.0;
  if (d_logits) d_logits->resize(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double z = logits(i), t = y[static_cast<std::size_t>(i)];
    sum += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    if (d_logits) {
      const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      (*d_logits)(i) = (sig - t) / n;
    }
  }
  return sum / n;
}

double loss_dis(const RowVec& current, const RowVec& previous, RowVec* d_current) {
  require(current.size() == previous.size(), ErrorKind::InvalidInput, "distillation features differ in width");
  const RowVec diff = current - previous;
  if (d_current) *d_current = 2.0 * diff;
  return diff.squaredNorm();
}

double loss_total(double l_cls, double l_ind, double l_dis, double mu1, double mu2) {
  return l_cls + mu1 * l_ind + mu2 * l_dis;
}

// ---------------------------------------------------------------------------
// Anchor schedule

AnchorSelection select_anchors_for_step(int epoch, const TrainSample& sample, const EncoderState& encoder,
                                        const AnchorLibrary& lib, const TrainConfig& cfg) {
  const auto n = static_cast<std::size_t>(cfg.n_anchors);
  if (epoch <= cfg.warmup) return {match_static(sample.indicators, lib, sample.label, n), AnchorPhase::fixed};
  const RowVec f = forward(sample.image, Mat(), encoder).feature;
  const Embedding feature(f.data(), f.data() + f.size());
  try {
    return {match_dynamic(feature, lib, sample.label, n), AnchorPhase::dynamic};
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::DegenerateFeature) throw;
  }
  return {match_static(sample.indicators, lib, sample.label, n), AnchorPhase::fixed_fallback};
}

Mat anchor_rows(const std::vector<MatchedAnchor>& matched, int dim) {
  std::vector<std::vector<double>> rows;
  rows.reserve(matched.size());
  for (const auto& m : matched) rows.push_back(m.embedding);
  return anchor_matrix(rows, dim);
}

// ---------------------------------------------------------------------------
// Objective

ObjectiveTerms sample_objective(const EncoderState& encoder, const Heads& heads, const Image& image,
                                const Mat& anchors, Label label, const IndVector& y_ind, const RowVec* teacher,
                                double mu1, double mu2, EncoderState* encoder_grads, Heads* head_grads,
                                double weight) {
  auto fwd = forward(image, anchors, encoder);
  const RowVec& f = fwd.feature;
  const bool grads = encoder_grads || head_grads;

  ObjectiveTerms t;
  RowVec d_bin, d_ml, d_dis;
  t.cls = loss_cls(heads.binary_logits(f), label, grads ? &d_bin : nullptr);
  t.ind = loss_ind(heads.multilabel_logits(f), y_ind, grads ? &d_ml : nullptr);
  if (teacher) t.dis = loss_dis(f, *teacher, grads ? &d_dis : nullptr);
  t.total = loss_total(t.cls, t.ind, t.dis, mu1, mu2);
  if (!grads) return t;

  d_bin *= weight;
  d_ml *= weight * mu1;
  if (head_grads) {
    head_grads->bin_w.noalias() += d_bin.transpose() * f;
    head_grads->bin_b += d_bin;
    head_grads->ml_w.noalias() += d_ml.transpose() * f;
    head_grads->ml_b += d_ml;
  }
  if (encoder_grads) {
    RowVec d_f = d_bin * heads.bin_w + d_ml * heads.ml_w;
    if (teacher) d_f += (weight * mu2) * d_dis;
    backward_into(fwd.trace, encoder, d_f, *encoder_grads);
  }
  return t;
}

GradientCheckReport check_objective_gradients(EncoderState& encoder, Heads& heads, const Image& image,
                                              const Mat& anchors, Label label, const IndVector& y_ind,
                                              const RowVec* teacher, double mu1, double mu2, double h) {
  EncoderState eg = EncoderState::zeros_like(encoder);
  Heads hg = Heads::zeros_like(heads);
  sample_objective(encoder, heads, image, anchors, label, y_ind, teacher, mu1, mu2, &eg, &hg, 1.0);

  std::vector<NamedTensor> params = encoder.tensors();
  for (auto& t : heads.tensors()) params.push_back(t);
  std::vector<const Mat*> analytic;
  for (const auto& t : std::as_const(eg).tensors()) analytic.push_back(t.tensor);
  for (const auto& t : std::as_const(hg).tensors()) analytic.push_back(t.tensor);

  auto loss = [&] {
    return sample_objective(encoder, heads, image, anchors, label, y_ind, teacher, mu1, mu2).total;
  };
  return check_gradients(params, analytic, loss, h);
}

// ---------------------------------------------------------------------------
// Optimizer

void Adam::step(const std::vector<NamedTensor>& params, const std::vector<const Mat*>& grads) {
  require(params.size() == grads.size(), ErrorKind::InvalidInput, "optimizer tensor lists differ in length");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Mat::Zero(p.tensor->rows(), p.tensor->cols()));
      v_.push_back(Mat::Zero(p.tensor->rows(), p.tensor->cols()));
    }
  }
  require(m_.size() == params.size(), ErrorKind::InvalidInput, "optimizer tensor list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat& g = *grads[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    *params[i].tensor -= (lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_)).matrix();
  }
}

// ---------------------------------------------------------------------------
// Training loop

TaskOutcome train_task(const std::vector<TrainSample>& data, EncoderState encoder, Heads heads,
                       const TaskSnapshot* previous, std::shared_ptr<const AnchorLibrary> lib,
                       const TrainConfig& cfg) {
  cfg.validate();
  require(!data.empty(), ErrorKind::InvalidInput, "task has no training samples");
  require(lib != nullptr, ErrorKind::InvalidInput, "training needs an anchor library");
  require(lib->dim() == static_cast<std::size_t>(encoder.config.d_model), ErrorKind::InvalidInput,
          "anchor dimension must equal the encoder width");
  require(heads.dim() == encoder.config.d_model, ErrorKind::InvalidInput, "head width must equal the encoder width");
  for (const auto& s : data) {
    require(s.label == Label::fake || std::all_of(s.y_ind.begin(), s.y_ind.end(), [](auto b) { return b == 0; }),
            ErrorKind::InvalidInput, "real sample " + s.id + " carries artifact bits");
    require(s.indicators.anomaly.has_value(), ErrorKind::InvalidInput, "sample " + s.id + " lacks anomaly scores");
  }
  if (previous) require(previous->encoder != nullptr, ErrorKind::InvalidInput, "snapshot without an encoder");

  const int d = encoder.config.d_model;
  Adam opt(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TaskOutcome out{std::move(encoder), std::move(heads), {}, {}};
  EncoderState& enc = out.encoder;
  Heads& hd = out.heads;
  int global_batch = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    int batch_in_epoch = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const double weight = 1.0 / static_cast<double>(end - start);
      EncoderState eg = EncoderState::zeros_like(enc);
      Heads hg = Heads::zeros_like(hd);
      ObjectiveTerms sum;
      for (std::size_t k = start; k < end; ++k) {
        const TrainSample& s = data[order[k]];
        const auto sel = select_anchors_for_step(epoch, s, enc, *lib, cfg);
        const IndVector y_ind = make_ind_target(s.label, sel.anchors);
        const Mat anchors = cfg.inject ? anchor_rows(sel.anchors, d) : Mat();
        RowVec teacher;
        if (previous) teacher = forward(s.image, anchors, *previous->encoder).feature;
        const auto t = sample_objective(enc, hd, s.image, anchors, s.label, y_ind, previous ? &teacher : nullptr,
                                        cfg.mu1, cfg.mu2, &eg, &hg, weight);
        sum.total += t.total * weight;
        sum.cls += t.cls * weight;
        sum.ind += t.ind * weight;
        sum.dis += t.dis * weight;
      }
      if (!std::isfinite(sum.total)) {
        fail(ErrorKind::TrainingDiverged, "non-finite loss at batch " + std::to_string(global_batch));
      }

      std::vector<NamedTensor> params = enc.tensors();
      for (auto& t : hd.tensors()) params.push_back(t);
      std::vector<const Mat*> grads;
      for (const auto& t : std::as_const(eg).tensors()) grads.push_back(t.tensor);
      for (const auto& t : std::as_const(hg).tensors()) grads.push_back(t.tensor);
      opt.step(params, grads);

      out.log.push_back({epoch, batch_in_epoch, sum.total, sum.cls, sum.ind, sum.dis});
      ++batch_in_epoch;
      ++global_batch;
    }
  }

  out.snapshot.encoder = std::make_shared<const EncoderState>(enc);
  out.snapshot.library = std::move(lib);
  return out;
}

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::IOError, "cannot write " + path.string());
  out << "epoch,batch,loss_total,loss_cls,loss_ind,loss_dis\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << r.batch << ',' << format_fixed6(r.loss_total) << ',' << format_fixed6(r.loss_cls) << ','
        << format_fixed6(r.loss_ind) << ',' << format_fixed6(r.loss_dis) << '\n';
  }
  require(out.good(), ErrorKind::IOError, "write failed: " + path.string());
}

}  // namespace aifind
