#include "aifind/harmonizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "aifind/binary_io.hpp"
#include "aifind/error.hpp"

namespace aifind {

namespace {

constexpr double kCoincidentAngle = 1e-8;

Eigen::VectorXd flatten(const Mat& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

Mat unflatten(const Eigen::VectorXd& v, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = v;
  return m;
}

Eigen::VectorXd normalized(const Eigen::VectorXd& v, ErrorKind kind, const char* what) {
  const double n = v.norm();
  require(n > 0.0 && std::isfinite(n), kind, what);
  return v / n;
}

}  // namespace

HeadVector HeadVector::from_weight(const Mat& weight, HeadKind kind, std::uint32_t task_id) {
  require(weight.allFinite(), ErrorKind::InvalidInput, "head weights are not finite");
  HeadVector h;
  const Eigen::VectorXd flat = flatten(weight);
  h.norm = flat.norm();
  require(h.norm > 0.0, ErrorKind::InvalidInput, "head weights have zero norm");
  h.flat = flat / h.norm;
  h.kind = kind;
  h.task_id = task_id;
  return h;
}

void TaskHeadArchive::append(HeadVector entry) {
  require(entry.kind == kind_, ErrorKind::InvalidInput, "head kind does not match the archive");
  require(std::abs(entry.flat.norm() - 1.0) <= kUnitTolerance, ErrorKind::InvalidInput,
          "archive entries must be unit vectors");
  require(entry.norm > 0.0, ErrorKind::InvalidInput, "archive entries need a positive original norm");
  require(entries_.empty() || entries_.front().flat.size() == entry.flat.size(), ErrorKind::InvalidInput,
          "archive entries must share one dimension");
  entries_.push_back(std::move(entry));
}

Eigen::VectorXd affinity_weights(const Eigen::VectorXd& current, const TaskHeadArchive& archive, double tau) {
  require(!archive.empty(), ErrorKind::NoHistory, "affinity weights need at least one previous task");
  require(tau > 0.0, ErrorKind::InvalidInput, "temperature must be positive");
  const auto n = static_cast<Eigen::Index>(archive.size());
  Eigen::VectorXd logits(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& w = archive.entries()[static_cast<std::size_t>(j)].flat;
    require(w.size() == current.size(), ErrorKind::InvalidInput, "head dimension differs from the archive");
    logits(j) = current.dot(w) / (current.norm() * w.norm()) / tau;
  }
  const Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

Eigen::VectorXd global_reference(const TaskHeadArchive& archive, const Eigen::VectorXd& omega) {
  require(!archive.empty(), ErrorKind::NoHistory, "reference needs at least one previous task");
  require(omega.size() == static_cast<Eigen::Index>(archive.size()), ErrorKind::InvalidInput,
          "weight count does not match the archive");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(archive.entries().front().flat.size());
  for (std::size_t j = 0; j < archive.size(); ++j) sum += omega(static_cast<Eigen::Index>(j)) * archive.entries()[j].flat;
  return normalized(sum, ErrorKind::DegenerateReference, "aggregated history cancels to zero");
}

double adaptive_t(const Eigen::VectorXd& current, const Eigen::VectorXd& reference) {
  return std::clamp(current.dot(reference), 0.0, 1.0);
}

Eigen::VectorXd slerp(const Eigen::VectorXd& from, const Eigen::VectorXd& to, double t) {
  require(from.size() == to.size(), ErrorKind::InvalidInput, "slerp operands differ in dimension");
  require(t >= 0.0 && t <= 1.0, ErrorKind::InvalidInput, "slerp parameter outside [0,1]");
  const double theta = std::acos(std::clamp(from.dot(to), -1.0, 1.0));
  if (theta < kCoincidentAngle) return from;
  require(theta <= std::numbers::pi - kCoincidentAngle, ErrorKind::UndefinedGeodesic,
          "antipodal directions have no unique geodesic");
  const double s = std::sin(theta);
  return (std::sin((1.0 - t) * theta) / s) * from + (std::sin(t * theta) / s) * to;
}

Eigen::VectorXd rescale(const Eigen::VectorXd& aligned, double original_norm) {
  require(original_norm > 0.0, ErrorKind::InvalidInput, "original norm must be positive");
  return aligned * original_norm;
}

AlignMethod parse_align_method(std::string_view s) {
  if (s == "slerp") return AlignMethod::slerp;
  if (s == "lerp") return AlignMethod::lerp;
  if (s == "ema") return AlignMethod::ema;
  if (s == "wm") return AlignMethod::wm;
  fail(ErrorKind::InvalidInput, "unknown alignment method '" + std::string(s) + "'");
}

std::string_view to_string(AlignMethod m) {
  switch (m) {
    case AlignMethod::slerp: return "slerp";
    case AlignMethod::lerp: return "lerp";
    case AlignMethod::ema: return "ema";
    case AlignMethod::wm: return "wm";
  }
  return "?";
}

Eigen::VectorXd align_direction(const Eigen::VectorXd& current, const TaskHeadArchive& archive,
                                const HarmonizerOptions& opts) {
  const Eigen::VectorXd omega = affinity_weights(current, archive, opts.tau);
  const Eigen::VectorXd ref = global_reference(archive, omega);
  const double t = adaptive_t(current, ref);
  switch (opts.method) {
    case AlignMethod::slerp:
      return slerp(current, ref, t);
    case AlignMethod::lerp:
      return normalized((1.0 - t) * current + t * ref, ErrorKind::DegenerateReference, "lerp collapsed to zero");
    case AlignMethod::ema:
      return normalized(opts.ema_alpha * ref + (1.0 - opts.ema_alpha) * current, ErrorKind::DegenerateReference,
                        "ema collapsed to zero");
    case AlignMethod::wm: {
      // Affinity softmax over the current head together with its history.
      const auto n = static_cast<Eigen::Index>(archive.size());
      Eigen::VectorXd logits(n + 1);
      logits(0) = 1.0 / opts.tau;
      for (Eigen::Index j = 0; j < n; ++j) logits(j + 1) = current.dot(archive.entries()[static_cast<std::size_t>(j)].flat) / opts.tau;
      Eigen::VectorXd w = (logits.array() - logits.maxCoeff()).exp();
      w /= w.sum();
      Eigen::VectorXd sum = w(0) * current;
      for (Eigen::Index j = 0; j < n; ++j) sum += w(j + 1) * archive.entries()[static_cast<std::size_t>(j)].flat;
      return normalized(sum, ErrorKind::DegenerateReference, "weighted mean collapsed to zero");
    }
  }
  return current;
}

Heads harmonize(const Heads& heads, HeadArchives& archives, std::uint32_t task_id, const HarmonizerOptions& opts) {
  auto process = [&](const Mat& weight, const TaskHeadArchive& archive, HeadKind kind, Mat& out_weight) {
    HeadVector cur = HeadVector::from_weight(weight, kind, task_id);
    if (!archive.empty()) {
      cur.flat = align_direction(cur.flat, archive, opts);
      cur.flat /= cur.flat.norm();
      out_weight = unflatten(rescale(cur.flat, cur.norm), weight.rows(), weight.cols());
    }
    return cur;
  };
  Heads out = heads;
  HeadVector b = process(heads.bin_w, archives.binary, HeadKind::binary, out.bin_w);
  HeadVector m = process(heads.ml_w, archives.multilabel, HeadKind::multilabel, out.ml_w);
  HeadArchives next = archives;
  next.binary.append(std::move(b));
  next.multilabel.append(std::move(m));
  archives = std::move(next);
  return out;
}

void HeadArchives::save(const std::filesystem::path& path) const {
  io::BinaryWriter w(path);
  w.magic("AIFH");
  w.u32(static_cast<std::uint32_t>(binary.size() + multilabel.size()));
  for (const auto* archive : {&binary, &multilabel}) {
    for (const auto& e : archive->entries()) {
      w.u8(static_cast<std::uint8_t>(e.kind));
      w.u32(e.task_id);
      w.u32(static_cast<std::uint32_t>(e.flat.size()));
      w.f64s(std::span<const double>(e.flat.data(), static_cast<std::size_t>(e.flat.size())));
      w.f64(e.norm);
    }
  }
  w.close();
}

HeadArchives HeadArchives::load(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  r.expect_magic("AIFH");
  HeadArchives a;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    HeadVector e;
    const auto kind = r.u8();
    require(kind <= 1, ErrorKind::FormatError, "bad head kind in " + path.string());
    e.kind = static_cast<HeadKind>(kind);
    e.task_id = r.u32();
    const auto dim = r.u32();
    const auto values = r.f64s(dim);
    e.flat = Eigen::Map<const Eigen::VectorXd>(values.data(), dim);
    e.norm = r.f64();
    try {
      (e.kind == HeadKind::binary ? a.binary : a.multilabel).append(std::move(e));
    } catch (const Error& err) {
      fail(ErrorKind::FormatError, std::string(err.what()) + " (" + path.string() + ")");
    }
  }
  require(r.at_end(), ErrorKind::FormatError, "trailing bytes in " + path.string());
  return a;
}

}  // namespace aifind
