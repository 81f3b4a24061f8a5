#include "aifind/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "aifind/binary_io.hpp"
#include "aifind/error.hpp"

namespace aifind {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined key
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

struct Rect {
  int x0, y0, x1, y1;  // half-open, in 64-pixel layout units
};

Mask rect_mask(int side, std::initializer_list<Rect> rects) {
  Mask m(side, side);
  for (const auto& r : rects) m.fill_rect(r.x0 * side / 64, r.y0 * side / 64, r.x1 * side / 64, r.y1 * side / 64);
  return m;
}

}  // namespace

std::vector<RecipeItem> default_recipe(int task_index) {
  using R = Region;
  using D = Dimension;
  switch (((task_index % 4) + 4) % 4) {
    case 0: return {{{R::nose, D::structure}, 0.25}, {{R::mouth, D::color}, -0.2}};
    case 1: return {{{R::eyes, D::color}, 0.2}, {{R::jawline, D::boundary}, 0.25}};
    case 2: return {{{R::boundary, D::boundary}, 0.25}, {{R::cheeks, D::texture}, 0.2}, {{R::mouth, D::blur}, 2.0}};
    default: return {{{R::cheeks, D::color}, 0.15}, {{R::eyes, D::texture}, 0.2}, {{R::nose, D::blur}, 2.0}};
  }
}

std::vector<RecipeItem> SyntheticSpec::recipe_for(int task_index) const {
  if (task_index >= 0 && static_cast<std::size_t>(task_index) < recipes.size())
    return recipes[static_cast<std::size_t>(task_index)];
  return default_recipe(task_index);
}

void SyntheticSpec::validate() const {
  require(image_side >= 32 && image_side % 8 == 0, ErrorKind::InvalidInput,
          "synthetic image side must be a multiple of 8 and >= 32");
  require(patch_size >= 1 && image_side % patch_size == 0, ErrorKind::InvalidInput,
          "patch size must divide the image side");
  require(train_per_class >= 2 && test_per_class >= 2, ErrorKind::InvalidInput,
          "each split needs at least 2 samples per class");
  for (const auto& r : recipes)
    for (const auto& item : r)
      require(is_valid_channel(item.channel), ErrorKind::InvalidInput,
              "recipe channel " + channel_name(item.channel) + " is outside the indicator table");
}

RegionMaskSet synthetic_masks(int side) {
  std::array<Mask, kRegionCount> regions = {
      rect_mask(side, {{14, 18, 26, 25}, {38, 18, 50, 25}}),  // eyes
      rect_mask(side, {{28, 26, 36, 40}}),                    // nose
      rect_mask(side, {{8, 30, 22, 42}, {42, 30, 56, 42}}),   // cheeks
      rect_mask(side, {{22, 44, 42, 51}}),                    // mouth
      rect_mask(side, {{10, 53, 54, 58}}),                    // jawline
      rect_mask(side, {{4, 4, 60, 7}, {4, 59, 60, 62}, {4, 7, 7, 59}, {57, 7, 60, 59}}),  // face outline
  };
  return RegionMaskSet(std::move(regions), rect_mask(side, {{18, 8, 46, 16}}));
}

Image synth_real_face(int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  const double bg[3] = {range(0.05, 0.35), range(0.05, 0.35), range(0.05, 0.35)};
  const double skin[3] = {0.70 + range(-0.08, 0.08), 0.52 + range(-0.08, 0.08), 0.42 + range(-0.08, 0.08)};
  const double grad_x = range(-0.1, 0.1), grad_y = range(-0.1, 0.1);
  const double wave_amp = range(0.01, 0.04), wave_fx = range(0.5, 2.0), wave_fy = range(0.5, 2.0);
  const double wave_phase = range(0.0, 2.0 * 3.141592653589793);
  const double eye_dark = range(0.35, 0.55);

  const auto s = [side](int v) { return v * side / 64; };
  const Mask face = rect_mask(side, {{4, 4, 60, 62}});
  const Mask eyes_inner = rect_mask(side, {{16, 19, 24, 24}, {40, 19, 48, 24}});
  const Mask mouth_inner = rect_mask(side, {{24, 45, 40, 50}});
  const Mask nose_ridge = rect_mask(side, {{31, 26, 33, 39}});

  Image img(side, side, 3);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double grain = range(-0.03, 0.03);
      double px[3];
      if (face.at(x, y)) {
        const double fx = static_cast<double>(x) / side - 0.5, fy = static_cast<double>(y) / side - 0.5;
        const double shade = grad_x * fx + grad_y * fy +
                             wave_amp * std::sin(2.0 * 3.141592653589793 * (wave_fx * fx + wave_fy * fy) + wave_phase);
        for (int c = 0; c < 3; ++c) px[c] = skin[c] + shade + grain;
        if (eyes_inner.at(x, y)) {
          for (double& v : px) v *= eye_dark;
        } else if (mouth_inner.at(x, y)) {
          px[0] += 0.08;
          px[1] -= 0.15;
          px[2] -= 0.10;
        } else if (nose_ridge.at(x, y)) {
          for (double& v : px) v += 0.05;
        }
      } else {
        for (int c = 0; c < 3; ++c) px[c] = bg[c] + 0.3 * grain;
      }
      for (int c = 0; c < 3; ++c) img.set(x, y, c, quantize8(px[c]));
    }
  }
  (void)s;
  return img;
}

namespace {

Image box_blur(const Image& img, int radius) {
  Image out(img.width(), img.height(), img.channels());
  const int n = (2 * radius + 1) * (2 * radius + 1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) {
        double acc = 0.0;
        for (int dy = -radius; dy <= radius; ++dy)
          for (int dx = -radius; dx <= radius; ++dx)
            acc += img.at(std::clamp(x + dx, 0, img.width() - 1), std::clamp(y + dy, 0, img.height() - 1), c);
        out.set(x, y, c, acc / n);
      }
  return out;
}

}  // namespace

Image apply_recipe(const Image& real, const RegionMaskSet& masks, const std::vector<RecipeItem>& recipe,
                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Image img = real;
  for (const auto& item : recipe) {
    require(is_valid_channel(item.channel), ErrorKind::InvalidInput,
            "recipe channel " + channel_name(item.channel) + " is outside the indicator table");
    const Mask& m = masks.region(item.channel.region);
    const double k = item.intensity;
    switch (item.channel.dimension) {
      case Dimension::blur: {
        const Image blurred = box_blur(img, std::max(1, static_cast<int>(std::lround(k))));
        for (int y = 0; y < img.height(); ++y)
          for (int x = 0; x < img.width(); ++x)
            if (m.at(x, y))
              for (int c = 0; c < 3; ++c) img.set(x, y, c, blurred.at(x, y, c));
        break;
      }
      case Dimension::color:
        for (int y = 0; y < img.height(); ++y)
          for (int x = 0; x < img.width(); ++x)
            if (m.at(x, y))
              for (int c = 0; c < 3; ++c) img.set(x, y, c, img.at(x, y, c) + k);
        break;
      case Dimension::structure: {
        double mean[3] = {0, 0, 0};
        const double n = static_cast<double>(m.count());
        for (int y = 0; y < img.height(); ++y)
          for (int x = 0; x < img.width(); ++x)
            if (m.at(x, y))
              for (int c = 0; c < 3; ++c) mean[c] += img.at(x, y, c) / n;
        for (int y = 0; y < img.height(); ++y)
          for (int x = 0; x < img.width(); ++x)
            if (m.at(x, y)) {
              const double cell = ((x / 2 + y / 2) % 2 == 0) ? 1.0 : -1.0;
              for (int c = 0; c < 3; ++c) img.set(x, y, c, mean[c] + k * cell);
            }
        break;
      }
      case Dimension::texture:
        for (int y = 0; y < img.height(); ++y)
          for (int x = 0; x < img.width(); ++x)
            if (m.at(x, y)) {
              const double noise = k * u(rng);
              for (int c = 0; c < 3; ++c) img.set(x, y, c, img.at(x, y, c) + noise);
            }
        break;
      case Dimension::boundary:
        for (int y = 0; y < img.height(); ++y)
          for (int x = 0; x < img.width(); ++x)
            if (m.at(x, y)) {
              const double seam = ((x / 3) % 2 == 0) ? k : -k;
              for (int c = 0; c < 3; ++c) img.set(x, y, c, img.at(x, y, c) + seam);
            }
        break;
    }
  }
  std::vector<double> q = img.data();
  for (double& v : q) v = quantize8(v);
  return Image::from_data(img.width(), img.height(), img.channels(), std::move(q));
}

void attach_anomaly_scores(TaskDataset& data) {
  require(data.masks != nullptr, ErrorKind::InvalidInput, "dataset has no region masks");
  auto fill_raw = [&](std::vector<TrainSample>& split) {
    for (auto& s : split) s.indicators = compute_indicator_matrix(s.image, *data.masks, s.id);
  };
  fill_raw(data.train);
  fill_raw(data.test);
  std::vector<IndicatorMatrix> calibration;
  for (const auto& s : data.train)
    if (s.label == Label::real) calibration.push_back(s.indicators);
  const auto norm = ChannelNormalizer::fit(calibration);
  for (auto* split : {&data.train, &data.test})
    for (auto& s : *split) s.indicators = anomaly_scores(std::move(s.indicators), norm);
}

TaskDataset gen_synthetic_task(const SyntheticSpec& spec, int task_index) {
  spec.validate();
  require(task_index >= 0, ErrorKind::InvalidInput, "task index must be non-negative");
  const auto recipe = spec.recipe_for(task_index);
  for (const auto& item : recipe)
    require(is_valid_channel(item.channel), ErrorKind::InvalidInput,
            "recipe channel " + channel_name(item.channel) + " is outside the indicator table");

  TaskDataset data;
  data.task_index = task_index;
  data.masks = std::make_shared<const RegionMaskSet>(synthetic_masks(spec.image_side));
  IndVector fake_bits{};
  for (const auto& item : recipe) fake_bits[static_cast<std::size_t>(item.channel.dimension)] = 1;

  auto make_split = [&](int split_id, int count, const char* split_name, std::vector<TrainSample>& out) {
    char buf[64];
    for (int i = 0; i < count; ++i) {
      const std::uint64_t key = mix(mix(mix(spec.seed, static_cast<std::uint64_t>(task_index)), split_id), i);
      Image real = synth_real_face(spec.image_side, key);
      Image fake = apply_recipe(real, *data.masks, recipe, mix(key, 0xFA4Eu));
      std::snprintf(buf, sizeof buf, "t%d_%s_real_%04d", task_index + 1, split_name, i);
      out.push_back({buf, std::move(real), data.masks, Label::real, IndVector{}, {}});
      std::snprintf(buf, sizeof buf, "t%d_%s_fake_%04d", task_index + 1, split_name, i);
      out.push_back({buf, std::move(fake), data.masks, Label::fake, fake_bits, {}});
    }
  };
  make_split(0, spec.train_per_class, "train", data.train);
  make_split(1, spec.test_per_class, "test", data.test);
  attach_anomaly_scores(data);
  return data;
}

namespace {

std::string bits_to_string(const IndVector& v) {
  std::string s;
  for (auto b : v) s += b ? '1' : '0';
  return s;
}

IndVector bits_from_string(const std::string& s) {
  require(s.size() == kDimensionCount, ErrorKind::FormatError, "y_ind must have 5 digits: " + s);
  IndVector v{};
  for (std::size_t i = 0; i < kDimensionCount; ++i) {
    require(s[i] == '0' || s[i] == '1', ErrorKind::FormatError, "y_ind must be binary: " + s);
    v[i] = s[i] == '1';
  }
  return v;
}

}  // namespace

void save_dataset(const TaskDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_mask_manifest(*data.masks, dir / "masks");
  {
    std::ofstream t(dir / "task.txt", std::ios::trunc);
    t << "task=" << data.task_index + 1 << "\n";
  }
  for (const auto& [name, split] : {std::pair{"train", &data.train}, std::pair{"test", &data.test}}) {
    const auto sdir = dir / name;
    std::filesystem::create_directories(sdir);
    std::ofstream labels(sdir / "labels.csv", std::ios::trunc);
    require(labels.good(), ErrorKind::IOError, "cannot write labels in " + sdir.string());
    labels << "id,label,y_ind\n";
    for (const auto& s : *split) {
      save_pnm(s.image, sdir / (s.id + ".ppm"));
      labels << s.id << ',' << static_cast<int>(s.label) << ',' << bits_to_string(s.y_ind) << '\n';
    }
  }
}

TaskDataset load_dataset(const std::filesystem::path& dir) {
  TaskDataset data;
  const auto task = KeyValueFile::load(dir / "task.txt");
  data.task_index = static_cast<int>(task.get_int("task")) - 1;
  data.masks = std::make_shared<const RegionMaskSet>(load_mask_manifest(dir / "masks" / "masks.txt"));
  for (const auto& [name, split] : {std::pair{"train", &data.train}, std::pair{"test", &data.test}}) {
    const auto sdir = dir / name;
    std::ifstream labels(sdir / "labels.csv");
    require(labels.good(), ErrorKind::IOError, "cannot read " + (sdir / "labels.csv").string());
    std::string line;
    std::getline(labels, line);
    require(line == "id,label,y_ind", ErrorKind::FormatError, "unexpected labels header in " + sdir.string());
    while (std::getline(labels, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string id, label, bits;
      std::getline(ss, id, ',');
      std::getline(ss, label, ',');
      std::getline(ss, bits, ',');
      require(label == "0" || label == "1", ErrorKind::FormatError, "label must be 0 or 1: " + line);
      TrainSample s{id, load_pnm(sdir / (id + ".ppm")), data.masks, label == "1" ? Label::fake : Label::real,
                    bits_from_string(bits), {}};
      require(s.label == Label::fake || bits == "00000", ErrorKind::FormatError,
              "real sample with artifact bits: " + id);
      split->push_back(std::move(s));
    }
  }
  attach_anomaly_scores(data);
  return data;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), ErrorKind::InvalidInput, "scores and labels differ in length");
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    require(labels[i] == 0 || labels[i] == 1, ErrorKind::InvalidInput, "labels must be 0 or 1");
    require(!std::isnan(scores[i]), ErrorKind::InvalidInput, "scores must not be NaN");
    n_pos += static_cast<std::size_t>(labels[i]);
  }
  const std::size_t n_neg = scores.size() - n_pos;
  require(n_pos > 0 && n_neg > 0, ErrorKind::UndefinedMetric, "AUC needs both classes present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;  // ranks are 1-based
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

namespace {

std::string_view dimension_real_phrase(Dimension d) {
  switch (d) {
    case Dimension::blur: return "sharp and finely detailed";
    case Dimension::color: return "evenly lit, matching the surrounding skin";
    case Dimension::structure: return "structurally coherent";
    case Dimension::texture: return "naturally textured";
    case Dimension::boundary: return "seamless";
  }
  return "";
}

std::string_view dimension_fake_phrase(Dimension d) {
  switch (d) {
    case Dimension::blur: return "blurry and smoothed out";
    case Dimension::color: return "unnaturally bright or tinted";
    case Dimension::structure: return "structurally distorted";
    case Dimension::texture: return "covered in irregular noisy texture";
    case Dimension::boundary: return "marked by visible blending seams";
  }
  return "";
}

class ToyEmbedder {
 public:
  ToyEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim) {
    if (dim_ >= kToyEmbedMinDim) return;
    std::mt19937_64 rng(mix(seed, 0x9207ull));
    std::normal_distribution<double> g(0.0, 1.0);
    projection_.resize(static_cast<Eigen::Index>(dim_), static_cast<Eigen::Index>(kToyEmbedMinDim));
    for (Eigen::Index i = 0; i < projection_.size(); ++i) projection_.data()[i] = g(rng);
  }

  Embedding operator()(Channel c, Label polarity, std::uint64_t seed) const {
    if (dim_ >= kToyEmbedMinDim) return toy_embed(c.dimension, c.region, polarity, seed, dim_);
    const Embedding base = toy_embed(c.dimension, c.region, polarity, seed, kToyEmbedMinDim);
    const Eigen::VectorXd v =
        projection_ * Eigen::Map<const Eigen::VectorXd>(base.data(), static_cast<Eigen::Index>(base.size()));
    const Eigen::VectorXd unit = v / v.norm();
    return Embedding(unit.data(), unit.data() + unit.size());
  }

 private:
  std::size_t dim_;
  Mat projection_;
};

}  // namespace

void harness_candidates(std::size_t dim, std::uint64_t seed, CandidateSets& candidates, SupportSets& supports) {
  constexpr int kCandidates = 3;
  constexpr int kSupport = 4;
  const ToyEmbedder embed(dim, seed);
  for (const Channel c : channels()) {
    const std::string region(to_string(c.region));
    auto& list = candidates[c];
    for (int k = 0; k < kCandidates; ++k) {
      const std::uint64_t s = mix(mix(seed, 100 + static_cast<std::uint64_t>(k)), channel_index(c));
      const std::string variant = " (v" + std::to_string(k + 1) + ")";
      list.push_back({"the " + region + " look " + std::string(dimension_real_phrase(c.dimension)) + variant,
                      "the " + region + " look " + std::string(dimension_fake_phrase(c.dimension)) + variant,
                      embed(c, Label::real, s), embed(c, Label::fake, s)});
    }
    auto& support = supports[c];
    for (int j = 0; j < kSupport; ++j) {
      const std::uint64_t s = mix(mix(seed, 1000 + static_cast<std::uint64_t>(j)), channel_index(c));
      support.push_back({embed(c, Label::real, s), embed(c, Label::fake, s)});
    }
  }
}

std::shared_ptr<const AnchorLibrary> harness_library(std::size_t dim, std::uint64_t seed) {
  CandidateSets candidates;
  SupportSets supports;
  harness_candidates(dim, seed, candidates, supports);
  return std::make_shared<const AnchorLibrary>(build_library(candidates, supports));
}

// ---------------------------------------------------------------------------
// Protocol

std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage) { return mix(seed, stage); }

ProtocolConfig ProtocolConfig::from_kv(const KeyValueFile& kv) {
  static const char* const known[] = {
      "tasks",  "image_side", "patch_size", "train_per_class", "test_per_class", "d_model", "layers",
      "heads",  "mlp_ratio",  "apa_layers", "gate",            "epochs",         "batch",   "lr",
      "mu1",    "mu2",        "n_anchors",  "n_warmup",        "seed",           "tau",     "ema_alpha",
      "align",  "no_adh",     "no_apa",     "no_ind"};
  for (const auto& [k, _] : kv.entries())
    require(std::find(std::begin(known), std::end(known), k) != std::end(known), ErrorKind::InvalidInput,
            "unknown config key '" + k + "'");

  ProtocolConfig c;
  auto geti = [&](const char* key, int& dst) {
    if (kv.contains(key)) dst = static_cast<int>(kv.get_int(key));
  };
  auto getb = [&](const char* key, bool& dst) {
    if (kv.contains(key)) dst = kv.get_int(key) != 0;
  };
  geti("tasks", c.tasks);
  geti("image_side", c.data.image_side);
  geti("patch_size", c.data.patch_size);
  geti("train_per_class", c.data.train_per_class);
  geti("test_per_class", c.data.test_per_class);
  c.encoder.image_side = c.data.image_side;
  c.encoder.patch_size = c.data.patch_size;
  geti("d_model", c.encoder.d_model);
  geti("layers", c.encoder.layers);
  geti("heads", c.encoder.heads);
  geti("mlp_ratio", c.encoder.mlp_ratio);
  geti("apa_layers", c.encoder.apa_layers);
  if (kv.contains("gate")) c.encoder.gate = GateMode::parse(kv.get("gate"));
  c.train = TrainConfig::from_kv(kv);
  if (kv.contains("seed")) c.seed = static_cast<std::uint64_t>(kv.get_int("seed"));
  if (kv.contains("tau")) c.harmonizer.tau = kv.get_double("tau");
  if (kv.contains("ema_alpha")) c.harmonizer.ema_alpha = kv.get_double("ema_alpha");
  if (kv.contains("align")) c.harmonizer.method = parse_align_method(kv.get("align"));
  getb("no_adh", c.ablations.no_adh);
  getb("no_apa", c.ablations.no_apa);
  getb("no_ind", c.ablations.no_ind);
  return c;
}

KeyValueFile ProtocolConfig::to_kv() const {
  KeyValueFile kv;
  auto put = [&](const char* key, auto v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    kv.set(key, ss.str());
  };
  put("tasks", tasks);
  put("image_side", data.image_side);
  put("patch_size", data.patch_size);
  put("train_per_class", data.train_per_class);
  put("test_per_class", data.test_per_class);
  put("d_model", encoder.d_model);
  put("layers", encoder.layers);
  put("heads", encoder.heads);
  put("mlp_ratio", encoder.mlp_ratio);
  put("apa_layers", encoder.apa_layers);
  kv.set("gate", encoder.gate.to_string());
  put("epochs", train.epochs);
  put("batch", train.batch);
  put("lr", train.lr);
  put("mu1", train.mu1);
  put("mu2", train.mu2);
  put("n_anchors", train.n_anchors);
  put("n_warmup", train.warmup);
  put("seed", seed);
  put("tau", harmonizer.tau);
  put("ema_alpha", harmonizer.ema_alpha);
  kv.set("align", std::string(to_string(harmonizer.method)));
  put("no_adh", ablations.no_adh ? 1 : 0);
  put("no_apa", ablations.no_apa ? 1 : 0);
  put("no_ind", ablations.no_ind ? 1 : 0);
  return kv;
}

ProtocolConfig ProtocolConfig::resolved() const {
  ProtocolConfig c = *this;
  c.data.seed = seed;
  c.train.seed = seed;
  c.encoder.image_side = c.data.image_side;
  c.encoder.patch_size = c.data.patch_size;
  c.encoder.channels = 3;
  c.train.inject = !ablations.no_apa;
  if (ablations.no_ind) c.train.mu1 = 0.0;
  return c;
}

std::string ProtocolConfig::hash() const { return io::hex64(io::fnv1a(to_kv().canonical())); }

std::vector<double> score_split(const std::vector<TrainSample>& split, const EncoderState& encoder,
                                const Heads& heads, const AnchorLibrary& lib, int n_anchors, bool inject) {
  std::vector<double> scores;
  scores.reserve(split.size());
  for (const auto& s : split) {
    Mat anchors;
    if (inject) {
      const RowVec pre = forward(s.image, Mat(), encoder).feature;
      const auto matched = match_label_free(Embedding(pre.data(), pre.data() + pre.size()), lib,
                                            static_cast<std::size_t>(n_anchors));
      anchors = anchor_rows(matched, encoder.config.d_model);
    }
    scores.push_back(heads.fake_probability(forward(s.image, anchors, encoder).feature));
  }
  return scores;
}

double evaluate_split(const std::vector<TrainSample>& split, const EncoderState& encoder, const Heads& heads,
                      const AnchorLibrary& lib, int n_anchors, bool inject) {
  const auto scores = score_split(split, encoder, heads, lib, n_anchors, inject);
  std::vector<int> labels;
  labels.reserve(split.size());
  for (const auto& s : split) labels.push_back(static_cast<int>(s.label));
  return auc(scores, labels);
}

ProtocolResult run_protocol(const ProtocolConfig& input, const ProgressFn& progress) {
  const ProtocolConfig cfg = input.resolved();
  require(cfg.tasks >= 1, ErrorKind::InvalidInput, "protocol needs at least one task");
  cfg.encoder.validate();
  cfg.train.validate();
  cfg.data.validate();

  using clock = std::chrono::steady_clock;
  ProtocolResult result;
  result.seed = cfg.seed;
  result.config_hash = cfg.hash();
  result.config_echo = cfg.to_kv().canonical();
  auto timed = [&](const std::string& stage, auto&& fn) {
    const auto t0 = clock::now();
    fn();
    result.timings.push_back({stage, std::chrono::duration<double>(clock::now() - t0).count()});
    if (progress) progress(stage + " done");
  };

  const auto lib = harness_library(static_cast<std::size_t>(cfg.encoder.d_model), stage_seed(cfg.seed, 1));
  EncoderState encoder = EncoderState::init(cfg.encoder, stage_seed(cfg.seed, 2));
  Heads heads = Heads::init(cfg.encoder.d_model, stage_seed(cfg.seed, 3));
  HeadArchives archives;
  std::optional<TaskSnapshot> snapshot;
  std::vector<std::vector<TrainSample>> test_splits;

  for (int t = 0; t < cfg.tasks; ++t) {
    const std::string tag = "task" + std::to_string(t + 1);
    try {
      TaskDataset data;
      timed(tag + ".generate", [&] { data = gen_synthetic_task(cfg.data, t); });
      TrainConfig tc = cfg.train;
      tc.seed = stage_seed(cfg.seed, 10 + static_cast<std::uint64_t>(t));
      timed(tag + ".train", [&] {
        auto outcome = train_task(data.train, std::move(encoder), std::move(heads), snapshot ? &*snapshot : nullptr,
                                  lib, tc);
        encoder = std::move(outcome.encoder);
        heads = std::move(outcome.heads);
        snapshot = std::move(outcome.snapshot);
        result.logs.push_back(std::move(outcome.log));
      });
      if (!cfg.ablations.no_adh) {
        timed(tag + ".harmonize",
              [&] { heads = harmonize(heads, archives, static_cast<std::uint32_t>(t + 1), cfg.harmonizer); });
      }
      test_splits.push_back(std::move(data.test));
      std::vector<double> row;
      timed(tag + ".evaluate", [&] {
        for (const auto& split : test_splits)
          row.push_back(evaluate_split(split, encoder, heads, *lib, cfg.train.n_anchors, cfg.train.inject));
      });
      double sum = 0.0;
      for (double v : row) sum += v;
      result.averages.push_back(sum / static_cast<double>(row.size()));
      result.auc.push_back(std::move(row));
    } catch (const Error& e) {
      throw Error(e.kind(), tag + ": " + e.what());
    }
  }
  return result;
}

void report(const ProtocolResult& result, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorKind::IOError, "cannot create output directory " + dir.string());
  {
    std::ofstream out(dir / "results.csv", std::ios::trunc);
    require(out.good(), ErrorKind::IOError, "cannot write " + (dir / "results.csv").string());
    out << "after_task,eval_task,auc\n";
    for (std::size_t s = 0; s < result.auc.size(); ++s)
      for (std::size_t e = 0; e < result.auc[s].size(); ++e)
        out << s + 1 << ',' << e + 1 << ',' << format_fixed6(result.auc[s][e]) << '\n';
    require(out.good(), ErrorKind::IOError, "write failed: " + (dir / "results.csv").string());
  }
  std::ofstream m(dir / "manifest.txt", std::ios::trunc);
  require(m.good(), ErrorKind::IOError, "cannot write " + (dir / "manifest.txt").string());
  m << "config_hash=" << result.config_hash << "\n";
  m << "seed=" << result.seed << "\n";
  m << "[config]\n" << result.config_echo;
  m << "[averages]\n";
  for (std::size_t s = 0; s < result.averages.size(); ++s)
    m << "after_task_" << s + 1 << "=" << format_fixed6(result.averages[s]) << "\n";
  m << "[timings_seconds]\n";
  for (const auto& t : result.timings) m << t.stage << "=" << format_fixed6(t.seconds) << "\n";
  require(m.good(), ErrorKind::IOError, "write failed: " + (dir / "manifest.txt").string());
}

}  // namespace aifind
