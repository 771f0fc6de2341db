#include "gfm/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <tuple>

#include "gfm/checkpoint.hpp"
#include "gfm/error.hpp"
#include "gfm/metrics.hpp"
#include "gfm/mim.hpp"

namespace gfm {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::classification: return "classification";
    case TaskKind::multilabel: return "multilabel";
    case TaskKind::segmentation: return "segmentation";
    case TaskKind::change_detection: return "change-detection";
    case TaskKind::super_resolution: return "super-resolution";
  }
  return "classification";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "multilabel" || s == "multi-label") return TaskKind::multilabel;
  if (s == "segmentation") return TaskKind::segmentation;
  if (s == "change-detection" || s == "change_detection" || s == "change") return TaskKind::change_detection;
  if (s == "super-resolution" || s == "super_resolution" || s == "superres") return TaskKind::super_resolution;
  fail(Errc::invalid_config, "unknown task kind '" + s + "'");
}

std::vector<std::string> metrics_for(TaskKind kind) {
  switch (kind) {
    case TaskKind::classification: return {"accuracy"};
    case TaskKind::multilabel: return {"mAP"};
    case TaskKind::segmentation: return {"mIoU"};
    case TaskKind::change_detection: return {"precision", "recall", "f1"};
    case TaskKind::super_resolution: return {"psnr", "ssim"};
  }
  return {};
}

void TaskSpec::validate() const {
  auto need = [](bool ok, const std::string& what) { check(ok, Errc::invalid_config, "task spec: " + what); };
  std::set<std::string> allowed;
  switch (kind) {
    case TaskKind::classification: allowed = {"accuracy"}; break;
    case TaskKind::multilabel: allowed = {"mAP"}; break;
    case TaskKind::segmentation: allowed = {"mIoU", "accuracy"}; break;
    case TaskKind::change_detection: allowed = {"precision", "recall", "f1"}; break;
    case TaskKind::super_resolution: allowed = {"psnr", "ssim"}; break;
  }
  for (const auto& m : metric_names())
    need(allowed.count(m) > 0, "metric '" + m + "' does not apply to " + to_string(kind));
  need(num_classes >= 1, "num_classes must be >= 1");
  if (kind == TaskKind::change_detection) need(num_classes == 2, "change detection is binary (num_classes 2)");
  if (kind == TaskKind::classification || kind == TaskKind::segmentation)
    need(num_classes >= 2, "num_classes must be >= 2");
  need(decoder_dim >= 1 && sr_channels >= 1, "decoder widths must be positive");
  need(scale_factor >= 1, "scale_factor must be >= 1");
  need(image_size >= 0, "image_size must be >= 0");
  need(schedule.iterations >= 1 || schedule.epochs >= 1, "need iterations or epochs");
  need(schedule.batch_size >= 1, "batch_size must be >= 1");
  need(schedule.lr > 0, "lr must be > 0");
  need(schedule.optimizer == "adamw" || schedule.optimizer == "sgd", "optimizer must be adamw or sgd");
  need(schedule.lr_schedule == "cosine" || schedule.lr_schedule == "poly", "lr_schedule must be cosine or poly");
}

TaskSpec TaskSpec::desk(TaskKind kind) {
  TaskSpec s;
  s.kind = kind;
  s.dataset = to_string(kind);
  s.schedule.iterations = 150;
  s.schedule.batch_size = 16;
  switch (kind) {
    case TaskKind::classification:
    case TaskKind::multilabel: s.num_classes = 4; break;
    case TaskKind::segmentation:
      s.num_classes = kSegmentClasses;
      s.schedule.lr_schedule = "poly";
      s.schedule.weight_decay = 0.01;
      s.schedule.batch_size = 8;
      break;
    case TaskKind::change_detection:
      s.num_classes = 2;
      s.schedule.optimizer = "sgd";
      s.schedule.lr_schedule = "poly";
      s.schedule.lr = 0.05;  // 0.01 barely moves in a few hundred iterations
      s.schedule.weight_decay = 5e-4;
      s.schedule.batch_size = 8;
      s.schedule.iterations = 500;  // some seeds sit at all-negative for the first ~200
      break;
    case TaskKind::super_resolution:
      s.schedule.flip = false;
      s.schedule.batch_size = 8;
      break;
  }
  return s;
}

TaskSpec TaskSpec::full_scale(TaskKind kind) {
  TaskSpec s = desk(kind);
  switch (kind) {
    case TaskKind::classification:
    case TaskKind::multilabel:
      s.image_size = kind == TaskKind::classification ? 256 : 128;
      s.schedule.epochs = 100;
      s.schedule.batch_size = 1024;
      s.schedule.lr = 1e-4;
      s.schedule.weight_decay = 0.05;
      break;
    case TaskKind::segmentation:
      s.image_size = 512;
      s.num_classes = 6;
      s.schedule.iterations = 40000;
      s.schedule.lr = 6e-5;
      s.schedule.weight_decay = 0.01;
      s.schedule.warmup_fraction = 1500.0 / 40000.0;
      break;
    case TaskKind::change_detection:
      s.image_size = 192;
      s.schedule.iterations = 4000;
      s.schedule.lr = 0.01;
      s.schedule.weight_decay = 5e-4;
      break;
    case TaskKind::super_resolution:
      s.image_size = 160;
      s.schedule.epochs = 100;
      s.schedule.batch_size = 64;
      s.schedule.lr = 1.25e-5;
      s.schedule.weight_decay = 0.05;
      break;
  }
  return s;
}

void to_json(nlohmann::json& j, const TaskSpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind)},
                     {"dataset", s.dataset},
                     {"metrics", s.metric_names()},
                     {"num_classes", s.num_classes},
                     {"decoder_dim", s.decoder_dim},
                     {"abs_diff", s.abs_diff},
                     {"scale_factor", s.scale_factor},
                     {"residual", s.residual},
                     {"sr_channels", s.sr_channels},
                     {"image_size", s.image_size},
                     {"seed", s.seed},
                     {"schedule",
                      {{"iterations", s.schedule.iterations},
                       {"epochs", s.schedule.epochs},
                       {"batch_size", s.schedule.batch_size},
                       {"optimizer", s.schedule.optimizer},
                       {"lr_schedule", s.schedule.lr_schedule},
                       {"lr", s.schedule.lr},
                       {"weight_decay", s.schedule.weight_decay},
                       {"momentum", s.schedule.momentum},
                       {"warmup_fraction", s.schedule.warmup_fraction},
                       {"flip", s.schedule.flip}}}};
}

void from_json(const nlohmann::json& j, TaskSpec& s) {
  const TaskKind kind = task_kind_from_string(j.at("kind").get<std::string>());
  const TaskSpec d = TaskSpec::desk(kind);
  s = d;
  s.dataset = j.value("dataset", d.dataset);
  s.metrics = j.value("metrics", std::vector<std::string>{});
  s.num_classes = j.value("num_classes", d.num_classes);
  s.decoder_dim = j.value("decoder_dim", d.decoder_dim);
  s.abs_diff = j.value("abs_diff", d.abs_diff);
  s.scale_factor = j.value("scale_factor", d.scale_factor);
  s.residual = j.value("residual", d.residual);
  s.sr_channels = j.value("sr_channels", d.sr_channels);
  s.image_size = j.value("image_size", d.image_size);
  s.seed = j.value("seed", d.seed);
  if (j.contains("schedule")) {
    const auto& k = j["schedule"];
    auto& t = s.schedule;
    t.iterations = k.value("iterations", t.iterations);
    t.epochs = k.value("epochs", t.epochs);
    t.batch_size = k.value("batch_size", t.batch_size);
    t.optimizer = k.value("optimizer", t.optimizer);
    t.lr_schedule = k.value("lr_schedule", t.lr_schedule);
    t.lr = k.value("lr", t.lr);
    t.weight_decay = k.value("weight_decay", t.weight_decay);
    t.momentum = k.value("momentum", t.momentum);
    t.warmup_fraction = k.value("warmup_fraction", t.warmup_fraction);
    t.flip = k.value("flip", t.flip);
  }
}

void to_json(nlohmann::json& j, const MetricResult& r) {
  j = nlohmann::json{{"method", r.method}, {"dataset", r.dataset}, {"task", to_string(r.kind)}};
  auto scores = nlohmann::json::object();
  for (const auto& [k, v] : r.scores) {
    if (std::isinf(v))
      scores[k] = v > 0 ? "inf" : "-inf";
    else
      scores[k] = v;
  }
  j["scores"] = scores;
}

void from_json(const nlohmann::json& j, MetricResult& r) {
  r.method = j.at("method").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.kind = task_kind_from_string(j.value("task", std::string("classification")));
  r.scores.clear();
  for (const auto& [k, v] : j.at("scores").items()) {
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      r.scores[k] = s == "-inf" ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    } else {
      r.scores[k] = v.get<double>();
    }
  }
}

// ---------------------------------------------------------------------------

TaskDataset load_task_dataset(const DatasetManifest& manifest, TaskKind kind, const std::string& name) {
  TaskDataset data;
  data.name = name;
  data.kind = kind;
  bool first = true;
  for (const auto& rec : manifest.records) {
    TaskSample s;
    s.image = read_png(manifest.resolve(rec.path));
    auto need = [&](bool ok, const char* field) {
      check(ok, Errc::parse_error, rec.path + ": " + to_string(kind) + " record needs '" + field + "'");
    };
    switch (kind) {
      case TaskKind::classification:
        need(rec.label.has_value(), "label");
        s.label = *rec.label;
        break;
      case TaskKind::multilabel:
        need(rec.labels.has_value() || rec.label.has_value(), "labels");
        s.labels = rec.labels ? *rec.labels : std::vector<int>{*rec.label};
        break;
      case TaskKind::segmentation:
      case TaskKind::change_detection: {
        need(rec.target.has_value(), "target");
        int h = 0, w = 0;
        s.dense = read_label_png(manifest.resolve(*rec.target), &h, &w);
        check(h == s.image.height && w == s.image.width, Errc::shape_mismatch, rec.path + ": mask size differs");
        if (kind == TaskKind::change_detection) {
          need(rec.partner.has_value(), "partner");
          s.partner = read_png(manifest.resolve(*rec.partner));
          check(s.partner->height == s.image.height && s.partner->width == s.image.width, Errc::shape_mismatch,
                rec.path + ": pair is not co-registered");
          for (auto& v : s.dense) v = v != 0 ? 1 : 0;
        }
        break;
      }
      case TaskKind::super_resolution:
        need(rec.target.has_value(), "target");
        s.target = read_png(manifest.resolve(*rec.target));
        break;
    }
    if (first) data.channels = s.image.channels;
    first = false;
    check(s.image.channels == data.channels, Errc::incompatible_channels, rec.path + ": channel count differs");
    (rec.split.value_or("train") == "val" ? data.val : data.train).push_back(std::move(s));
  }
  return data;
}

// ---------------------------------------------------------------------------

namespace {

using MapKey = std::tuple<int, std::size_t, std::size_t, std::size_t>;

ag::SparseMapPtr cached(const MapKey& key, const std::function<ag::SparseMap()>& build) {
  static std::mutex mutex;
  static std::map<MapKey, ag::SparseMapPtr> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto map = std::make_shared<const ag::SparseMap>(build());
  cache.emplace(key, map);
  return map;
}

double cubic_weight(double x) {
  constexpr double a = -0.75;
  x = std::abs(x);
  if (x <= 1) return ((a + 2) * x - (a + 3)) * x * x + 1;
  if (x < 2) return ((a * x - 5 * a) * x + 8 * a) * x - 4 * a;
  return 0.0;
}

}  // namespace

ag::SparseMapPtr bilinear_upsample_map(std::size_t in_side, std::size_t out_side, std::size_t channels) {
  return cached({0, in_side, out_side, channels}, [&] {
    ag::SparseMap m;
    m.out_shape = {out_side, out_side, channels};
    m.in_numel = in_side * in_side * channels;
    m.taps = 4;
    m.index.reserve(out_side * out_side * channels * 4);
    m.weight.reserve(out_side * out_side * channels * 4);
    const double scale = static_cast<double>(in_side) / static_cast<double>(out_side);
    auto axis = [&](std::size_t o) {
      const double s = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(in_side - 1));
      const std::size_t lo = static_cast<std::size_t>(std::floor(s));
      return std::tuple{lo, std::min(lo + 1, in_side - 1), s - static_cast<double>(lo)};
    };
    for (std::size_t oy = 0; oy < out_side; ++oy) {
      const auto [y0, y1, fy] = axis(oy);
      for (std::size_t ox = 0; ox < out_side; ++ox) {
        const auto [x0, x1, fx] = axis(ox);
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t ys[2] = {y0, y1}, xs[2] = {x0, x1};
          const double wy[2] = {1 - fy, fy}, wx[2] = {1 - fx, fx};
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) {
              m.index.push_back(static_cast<std::int64_t>((ys[a] * in_side + xs[b]) * channels + c));
              m.weight.push_back(wy[a] * wx[b]);
            }
        }
      }
    }
    return m;
  });
}

ag::SparseMapPtr bicubic_upsample_map(std::size_t in_side, std::size_t out_side, std::size_t channels) {
  return cached({1, in_side, out_side, channels}, [&] {
    ag::SparseMap m;
    m.out_shape = {out_side, out_side, channels};
    m.in_numel = in_side * in_side * channels;
    m.taps = 16;
    const double scale = static_cast<double>(in_side) / static_cast<double>(out_side);
    const auto last = static_cast<std::int64_t>(in_side) - 1;
    auto axis = [&](std::size_t o) {
      const double s = (o + 0.5) * scale - 0.5;
      const auto base = static_cast<std::int64_t>(std::floor(s));
      const double t = s - static_cast<double>(base);
      std::array<std::int64_t, 4> idx{};
      std::array<double, 4> w{};
      for (int k = 0; k < 4; ++k) {
        idx[k] = std::clamp<std::int64_t>(base - 1 + k, 0, last);
        w[k] = cubic_weight(t - (k - 1));
      }
      return std::pair{idx, w};
    };
    for (std::size_t oy = 0; oy < out_side; ++oy) {
      const auto [iy, wy] = axis(oy);
      for (std::size_t ox = 0; ox < out_side; ++ox) {
        const auto [ix, wx] = axis(ox);
        for (std::size_t c = 0; c < channels; ++c)
          for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) {
              m.index.push_back((iy[a] * static_cast<std::int64_t>(in_side) + ix[b]) *
                                    static_cast<std::int64_t>(channels) +
                                static_cast<std::int64_t>(c));
              m.weight.push_back(wy[a] * wx[b]);
            }
      }
    }
    return m;
  });
}

ag::SparseMapPtr im2col3x3_map(std::size_t side, std::size_t channels) {
  return cached({2, side, side, channels}, [&] {
    ag::SparseMap m;
    m.out_shape = {side, side, 9 * channels};
    m.in_numel = side * side * channels;
    m.index.reserve(side * side * 9 * channels);
    const auto s = static_cast<std::int64_t>(side);
    for (std::int64_t y = 0; y < s; ++y)
      for (std::int64_t x = 0; x < s; ++x)
        for (std::int64_t dy = -1; dy <= 1; ++dy)
          for (std::int64_t dx = -1; dx <= 1; ++dx)
            for (std::size_t c = 0; c < channels; ++c) {
              const std::int64_t yy = y + dy, xx = x + dx;
              const bool inside = yy >= 0 && yy < s && xx >= 0 && xx < s;
              m.index.push_back(inside ? (yy * s + xx) * static_cast<std::int64_t>(channels) +
                                             static_cast<std::int64_t>(c)
                                       : -1);
            }
    return m;
  });
}

Tensor<float> bicubic_upsample(const Tensor<float>& images, int factor) {
  check(images.rank() == 4 && images.dim(1) == images.dim(2), Errc::shape_mismatch,
        "bicubic_upsample expects square [B, H, W, C]");
  const auto map = bicubic_upsample_map(images.dim(1), images.dim(1) * static_cast<std::size_t>(factor), images.dim(3));
  return ag::apply(*map, images);
}

// ---------------------------------------------------------------------------

namespace {

Tensor<float> init_weight(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor<float> w({rows, cols});
  for (auto& v : w.data) v = static_cast<float>(rng.trunc_normal(0.02));
  return w;
}

}  // namespace

TaskModel::TaskModel(Encoder<float> encoder, const TaskSpec& spec, std::uint64_t seed)
    : spec_(spec), encoder_(std::move(encoder)) {
  spec_.validate();
  const auto& cfg = encoder_.config();
  check(encoder_.built_stages() == cfg.num_stages(), Errc::invalid_config, "task models need a full encoder");
  Rng rng(seed);
  const auto d = static_cast<std::size_t>(spec_.decoder_dim);
  auto add = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    const auto w = head_.add(name + ".weight", init_weight(rows, cols, rng), true);
    const auto b = head_.add(name + ".bias", Tensor<float>({cols}), false);
    return std::pair{w, b};
  };
  switch (spec_.kind) {
    case TaskKind::classification:
    case TaskKind::multilabel:
      std::tie(w0_, b0_) = add("fc", static_cast<std::size_t>(cfg.dims.back()),
                               static_cast<std::size_t>(spec_.num_classes));
      break;
    case TaskKind::segmentation:
    case TaskKind::change_detection:
    case TaskKind::super_resolution: {
      for (int s = 0; s < cfg.num_stages(); ++s) {
        auto [w, b] = add("proj." + std::to_string(s), static_cast<std::size_t>(cfg.dims[s]), d);
        proj_w_.push_back(w);
        proj_b_.push_back(b);
      }
      if (spec_.kind == TaskKind::super_resolution) {
        const auto patch = static_cast<std::size_t>(cfg.image_size / cfg.stage_sides().front());
        const auto mid = static_cast<std::size_t>(spec_.sr_channels);
        const auto s2 = static_cast<std::size_t>(spec_.scale_factor * spec_.scale_factor);
        std::tie(w0_, b0_) = add("expand", d, patch * patch * mid);
        std::tie(w1_, b1_) = add("upsample", 9 * mid, s2 * static_cast<std::size_t>(cfg.in_channels));
      } else {
        const std::size_t out = spec_.kind == TaskKind::segmentation ? static_cast<std::size_t>(spec_.num_classes) : 1;
        std::tie(w0_, b0_) = add("classifier", 9 * d, out);
      }
      break;
    }
  }
}

std::vector<OptimSlot> TaskModel::slots() {
  std::vector<OptimSlot> out;
  collect_slots(out, encoder_.params(), "encoder.");
  collect_slots(out, head_, "head.");
  return out;
}

void TaskModel::zero_decoder() {
  check(spec_.kind == TaskKind::super_resolution, Errc::invalid_config, "zero_decoder applies to super-resolution");
  std::fill(head_[w1_]->value.data.begin(), head_[w1_]->value.data.end(), 0.0f);
  std::fill(head_[b1_]->value.data.begin(), head_[b1_]->value.data.end(), 0.0f);
}

ag::Var<float> TaskModel::conv3x3(const ag::Var<float>& x, std::size_t weight, std::size_t bias) const {
  const std::size_t side = x->shape()[1], channels = x->shape()[3];
  return ag::linear(ag::resample(x, im2col3x3_map(side, channels)), head_[weight], head_[bias]);
}

ag::Var<float> TaskModel::fuse(const std::vector<ag::Var<float>>& stages) const {
  const std::size_t side0 = stages.front()->shape()[1];
  const auto d = static_cast<std::size_t>(spec_.decoder_dim);
  ag::Var<float> acc;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    auto p = ag::linear(stages[s], head_[proj_w_[s]], head_[proj_b_[s]]);
    const std::size_t side = stages[s]->shape()[1];
    if (side != side0) p = ag::resample(p, bilinear_upsample_map(side, side0, d));
    acc = acc ? ag::add(acc, p) : p;
  }
  return ag::gelu(acc);
}

ag::Var<float> TaskModel::dense_logits(const std::vector<ag::Var<float>>& stages) const {
  auto logits = conv3x3(fuse(stages), w0_, b0_);
  const std::size_t side = logits->shape()[1], k = logits->shape()[3];
  const auto out_side = static_cast<std::size_t>(encoder_.config().image_size);
  if (side != out_side) logits = ag::resample(logits, bilinear_upsample_map(side, out_side, k));
  return logits;
}

ag::Var<float> TaskModel::forward(const Tensor<float>& images, const Tensor<float>* partners) const {
  switch (spec_.kind) {
    case TaskKind::classification:
    case TaskKind::multilabel: {
      const auto pyr = encoder_.forward(ag::make_var(images));
      const auto& feat = pyr.final_normed ? pyr.final_normed : pyr.stages.back();
      const auto& sh = feat->shape();
      const auto pooled = ag::mean_tokens(ag::reshape(feat, {sh[0], sh[1] * sh[2], sh[3]}));
      return ag::linear(pooled, head_[w0_], head_[b0_]);
    }
    case TaskKind::segmentation: return dense_logits(encoder_.forward(ag::make_var(images)).stages);
    case TaskKind::change_detection:
      check(partners != nullptr, Errc::shape_mismatch, "change detection needs a second image");
      return change_logits(images, *partners);
    case TaskKind::super_resolution: return superres(images, spec_.residual);
  }
  return {};
}

std::vector<ag::Var<float>> TaskModel::feature_differences(const Tensor<float>& t1, const Tensor<float>& t2) const {
  check(t1.shape == t2.shape, Errc::shape_mismatch,
        "change pair shapes differ: " + shape_str(t1.shape) + " vs " + shape_str(t2.shape));
  const std::size_t b = t1.dim(0);
  Shape both = t1.shape;
  both[0] = 2 * b;
  const auto x = ag::reshape(ag::concat_batch(ag::make_var(t1), ag::make_var(t2)), both);
  const auto pyr = encoder_.forward(x);
  std::vector<ag::Var<float>> diffs;
  for (const auto& stage : pyr.stages) {
    auto d = ag::sub(ag::slice_batch(stage, 0, b), ag::slice_batch(stage, b, 2 * b));
    diffs.push_back(spec_.abs_diff ? ag::abs(d) : d);
  }
  return diffs;
}

ag::Var<float> TaskModel::change_logits(const Tensor<float>& t1, const Tensor<float>& t2) const {
  check(spec_.kind == TaskKind::change_detection, Errc::invalid_config, "model is not a change detector");
  return dense_logits(feature_differences(t1, t2));
}

ag::Var<float> TaskModel::superres(const Tensor<float>& low_res, bool residual) const {
  check(spec_.kind == TaskKind::super_resolution, Errc::invalid_config, "model is not a super-resolution model");
  const auto& cfg = encoder_.config();
  check(low_res.rank() == 4 && low_res.dim(1) == static_cast<std::size_t>(cfg.image_size) &&
            low_res.dim(2) == static_cast<std::size_t>(cfg.image_size),
        Errc::scale_mismatch,
        "input " + shape_str(low_res.shape) + " does not match the head's input size " +
            std::to_string(cfg.image_size));
  const auto pyr = encoder_.forward(ag::make_var(low_res));
  const auto fused = fuse(pyr.stages);
  const std::size_t side = fused->shape()[1];
  const auto patch = static_cast<std::size_t>(cfg.image_size) / side;
  const auto mid = static_cast<std::size_t>(spec_.sr_channels);
  auto x = ag::linear(fused, head_[w0_], head_[b0_]);
  x = ag::gelu(ag::resample(x, pixel_shuffle_map(side, patch, mid)));
  x = conv3x3(x, w1_, b1_);
  const auto scale = static_cast<std::size_t>(spec_.scale_factor);
  x = ag::resample(x, pixel_shuffle_map(static_cast<std::size_t>(cfg.image_size), scale,
                                        static_cast<std::size_t>(cfg.in_channels)));
  if (residual) x = ag::add(x, ag::make_var(bicubic_upsample(low_res, spec_.scale_factor)));
  return x;
}

ag::Var<float> change_detect_forward(const TaskModel& model, const Tensor<float>& t1, const Tensor<float>& t2) {
  return model.change_logits(t1, t2);
}

ag::Var<float> superres_forward(const TaskModel& model, const Tensor<float>& low_res, bool residual) {
  return model.superres(low_res, residual);
}

// ---------------------------------------------------------------------------

namespace {

Encoder<float> with_image_size(const Encoder<float>& enc, int image_size) {
  if (image_size == 0 || image_size == enc.config().image_size) return enc;
  EncoderConfig cfg = enc.config();
  cfg.image_size = image_size;
  cfg.mask_patch_size = std::gcd(cfg.mask_patch_size, image_size);
  Encoder<float> out(cfg, 0, enc.built_stages());
  import_float(out.params(), enc.params().export_float(), "", true);
  return out;
}

Image flip_image(const Image& img) {
  Image out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
  return out;
}

std::vector<int> flip_dense(const std::vector<int>& dense, int height, int width) {
  std::vector<int> out(dense.size());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out[static_cast<std::size_t>(y) * width + x] = dense[static_cast<std::size_t>(y) * width + (width - 1 - x)];
  return out;
}

Image fit(const Image& img, int size) {
  return img.height == size && img.width == size ? img : resize_bilinear(img, size, size);
}

struct Batch {
  Tensor<float> images;
  std::optional<Tensor<float>> partners;
  std::vector<int> labels;       // class ids or flattened dense labels
  Tensor<float> targets;         // multilabel / change / super-resolution
};

Batch make_batch(const std::vector<const TaskSample*>& samples, const TaskSpec& spec, int image_size, Rng* flip_rng) {
  std::vector<Image> imgs, partners, targets;
  Batch b;
  std::vector<float> tvals;
  for (const TaskSample* s : samples) {
    const bool flip = flip_rng && spec.schedule.flip && flip_rng->bernoulli(0.5);
    Image img = spec.kind == TaskKind::classification || spec.kind == TaskKind::multilabel ? fit(s->image, image_size)
                                                                                             : s->image;
    check(img.height == image_size && img.width == image_size, Errc::shape_mismatch,
          "tile is " + std::to_string(img.height) + "x" + std::to_string(img.width) + ", model expects " +
              std::to_string(image_size));
    imgs.push_back(flip ? flip_image(img) : img);
    switch (spec.kind) {
      case TaskKind::classification: b.labels.push_back(s->label); break;
      case TaskKind::multilabel: {
        std::vector<float> row(static_cast<std::size_t>(spec.num_classes), 0.0f);
        for (int l : s->labels) {
          check(l >= 0 && l < spec.num_classes, Errc::label_out_of_range, "label " + std::to_string(l));
          row[static_cast<std::size_t>(l)] = 1.0f;
        }
        tvals.insert(tvals.end(), row.begin(), row.end());
        break;
      }
      case TaskKind::segmentation:
      case TaskKind::change_detection: {
        const auto dense = flip ? flip_dense(s->dense, img.height, img.width) : s->dense;
        if (spec.kind == TaskKind::segmentation)
          b.labels.insert(b.labels.end(), dense.begin(), dense.end());
        else
          for (int v : dense) tvals.push_back(v != 0 ? 1.0f : 0.0f);
        if (s->partner) partners.push_back(flip ? flip_image(*s->partner) : *s->partner);
        break;
      }
      case TaskKind::super_resolution:
        check(s->target.has_value(), Errc::shape_mismatch, "super-resolution sample without target");
        check(s->target->height == img.height * spec.scale_factor && s->target->width == img.width * spec.scale_factor,
              Errc::scale_mismatch, "target is not " + std::to_string(spec.scale_factor) + "x the input");
        targets.push_back(flip ? flip_image(*s->target) : *s->target);
        break;
    }
  }
  b.images = stack_images(imgs);
  if (!partners.empty()) b.partners = stack_images(partners);
  if (!targets.empty()) b.targets = stack_images(targets);
  if (!tvals.empty()) b.targets = Tensor<float>({tvals.size()}, std::move(tvals));
  return b;
}

ag::Var<float> task_loss(const TaskModel& model, const Batch& batch, double pos_weight) {
  const auto& spec = model.spec();
  const auto out = model.forward(batch.images, batch.partners ? &*batch.partners : nullptr);
  switch (spec.kind) {
    case TaskKind::classification: return ag::softmax_cross_entropy(out, std::span<const int>(batch.labels));
    case TaskKind::multilabel: return ag::bce_with_logits(out, Tensor<float>(out->shape(), batch.targets.data));
    case TaskKind::segmentation: {
      const auto& sh = out->shape();
      return ag::softmax_cross_entropy(ag::reshape(out, {sh[0] * sh[1] * sh[2], sh[3]}),
                                       std::span<const int>(batch.labels));
    }
    case TaskKind::change_detection:
      return ag::bce_with_logits(out, Tensor<float>(out->shape(), batch.targets.data), static_cast<float>(pos_weight));
    case TaskKind::super_resolution: return ag::l1_mean(out, batch.targets);
  }
  return {};
}

}  // namespace

MetricResult evaluate(const TaskModel& model, const TaskDataset& data, const std::string& method,
                      Predictions* predictions) {
  check(!data.val.empty(), Errc::empty_split, data.name + ": validation split is empty");
  const auto& spec = model.spec();
  const int size = model.encoder().config().image_size;
  MetricResult r;
  r.method = method;
  r.dataset = data.name;
  r.kind = spec.kind;

  std::vector<int> pred, truth;
  std::vector<double> scores;
  double psnr_sum = 0, ssim_sum = 0;
  std::vector<Image> sr_out;
  constexpr std::size_t kEvalBatch = 16;
  for (std::size_t start = 0; start < data.val.size(); start += kEvalBatch) {
    std::vector<const TaskSample*> samples;
    for (std::size_t i = start; i < std::min(data.val.size(), start + kEvalBatch); ++i) samples.push_back(&data.val[i]);
    const Batch batch = make_batch(samples, spec, size, nullptr);
    const auto out = model.forward(batch.images, batch.partners ? &*batch.partners : nullptr);
    const auto& v = out->value;
    switch (spec.kind) {
      case TaskKind::classification:
      case TaskKind::segmentation: {
        const std::size_t k = v.shape.back(), rows = v.numel() / k;
        for (std::size_t row = 0; row < rows; ++row) {
          const float* p = v.data.data() + row * k;
          pred.push_back(static_cast<int>(std::max_element(p, p + k) - p));
        }
        truth.insert(truth.end(), batch.labels.begin(), batch.labels.end());
        break;
      }
      case TaskKind::multilabel:
        for (float x : v.data) scores.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(x))));
        for (float t : batch.targets.data) truth.push_back(t > 0.5f ? 1 : 0);
        break;
      case TaskKind::change_detection:
        for (float x : v.data) pred.push_back(x > 0 ? 1 : 0);
        for (float t : batch.targets.data) truth.push_back(t > 0.5f ? 1 : 0);
        break;
      case TaskKind::super_resolution: {
        const std::size_t per = v.numel() / v.dim(0);
        for (std::size_t i = 0; i < v.dim(0); ++i) {
          std::vector<double> p(per), t(per);
          for (std::size_t j = 0; j < per; ++j) {
            p[j] = std::clamp(static_cast<double>(v.data[i * per + j]), 0.0, 1.0);
            t[j] = batch.targets.data[i * per + j];
          }
          psnr_sum += psnr(p, t, 1.0);
          ssim_sum += ssim(p, t, v.dim(1), v.dim(2), v.dim(3), 1.0);
          if (predictions) {
            Image img(static_cast<int>(v.dim(1)), static_cast<int>(v.dim(2)), static_cast<int>(v.dim(3)));
            std::transform(p.begin(), p.end(), img.pixels.begin(), [](double x) { return static_cast<float>(x); });
            sr_out.push_back(std::move(img));
          }
        }
        break;
      }
    }
  }
  const auto n = static_cast<double>(data.val.size());
  for (const auto& m : spec.metric_names()) {
    if (m == "accuracy") r.scores[m] = accuracy(pred, truth);
    if (m == "mIoU") r.scores[m] = mean_iou(pred, truth, spec.num_classes);
    if (m == "mAP")
      r.scores[m] = average_precision_multilabel(scores, truth, data.val.size(), static_cast<std::size_t>(spec.num_classes));
    if (m == "precision" || m == "recall" || m == "f1") {
      const auto prf = f1_scores(pred, truth, 1);
      r.scores[m] = m == "precision" ? prf.precision : m == "recall" ? prf.recall : prf.f1;
    }
    if (m == "psnr") r.scores[m] = psnr_sum / n;
    if (m == "ssim") r.scores[m] = ssim_sum / n;
  }
  if (predictions) {
    Predictions& out = *predictions;
    out = Predictions{};
    out.kind = spec.kind;
    switch (spec.kind) {
      case TaskKind::classification:
        out.labels = pred;
        out.truth = truth;
        break;
      case TaskKind::multilabel: {
        const auto k = static_cast<std::size_t>(spec.num_classes);
        for (std::size_t i = 0; i < data.val.size(); ++i)
          out.scores.emplace_back(scores.begin() + static_cast<long>(i * k), scores.begin() + static_cast<long>((i + 1) * k));
        break;
      }
      case TaskKind::segmentation:
      case TaskKind::change_detection: {
        out.height = out.width = size;
        const auto per = static_cast<std::size_t>(size) * static_cast<std::size_t>(size);
        for (std::size_t i = 0; i < data.val.size(); ++i)
          out.masks.emplace_back(pred.begin() + static_cast<long>(i * per), pred.begin() + static_cast<long>((i + 1) * per));
        break;
      }
      case TaskKind::super_resolution: out.images = std::move(sr_out); break;
    }
  }
  return r;
}

std::vector<std::filesystem::path> write_predictions(const std::filesystem::path& dir, const Predictions& p) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  auto name = [](std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu.png", i);
    return std::string(buf);
  };
  switch (p.kind) {
    case TaskKind::classification:
    case TaskKind::multilabel: {
      const auto path = dir / "predictions.csv";
      std::ofstream os(path);
      check(static_cast<bool>(os), Errc::unwritable_destination, "cannot write " + path.string());
      if (p.kind == TaskKind::classification) {
        os << "index,predicted,truth\n";
        for (std::size_t i = 0; i < p.labels.size(); ++i) os << i << ',' << p.labels[i] << ',' << p.truth[i] << '\n';
      } else {
        const std::size_t k = p.scores.empty() ? 0 : p.scores.front().size();
        os << "index";
        for (std::size_t c = 0; c < k; ++c) os << ",class" << c;
        os << '\n';
        char buf[32];
        for (std::size_t i = 0; i < p.scores.size(); ++i) {
          os << i;
          for (double v : p.scores[i]) {
            std::snprintf(buf, sizeof buf, ",%.6f", v);
            os << buf;
          }
          os << '\n';
        }
      }
      files.push_back(path);
      break;
    }
    case TaskKind::segmentation:
    case TaskKind::change_detection:
      for (std::size_t i = 0; i < p.masks.size(); ++i) {
        auto mask = p.masks[i];
        if (p.kind == TaskKind::change_detection)
          for (auto& v : mask) v *= 255;
        files.push_back(dir / "masks" / name(i));
        write_label_png(files.back(), mask, p.height, p.width);
      }
      break;
    case TaskKind::super_resolution:
      for (std::size_t i = 0; i < p.images.size(); ++i) {
        files.push_back(dir / "images" / name(i));
        const Image& img = p.images[i];
        if (img.channels == 1 || img.channels == 3 || img.channels == 4) {
          write_png(files.back(), img);
          continue;
        }
        Image rgb(img.height, img.width, 3);  // multispectral: first three bands
        for (int y = 0; y < img.height; ++y)
          for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) rgb.at(y, x, c) = img.at(y, x, std::min(c, img.channels - 1));
        write_png(files.back(), rgb);
      }
      break;
  }
  return files;
}

FinetuneResult finetune(const Encoder<float>& init, const TaskSpec& spec, const TaskDataset& data,
                        const std::string& method) {
  spec.validate();
  check(data.kind == spec.kind, Errc::invalid_config,
        "dataset holds " + to_string(data.kind) + " samples, task is " + to_string(spec.kind));
  check(!data.train.empty(), Errc::empty_split, data.name + ": training split is empty");
  check(!data.val.empty(), Errc::empty_split, data.name + ": validation split is empty");

  Encoder<float> encoder = with_image_size(init, spec.image_size);
  const int have = encoder.config().in_channels;
  check(data.channels >= have, Errc::incompatible_channels,
        "data has " + std::to_string(data.channels) + " channels, encoder expects " + std::to_string(have));
  if (data.channels > have) encoder = encoder.extend_input_channels(data.channels, spec.seed ^ 0xc4a77e1ULL);
  encoder.unfreeze();

  TaskModel model(std::move(encoder), spec, Rng(spec.seed).fork(1).next());
  const int size = model.encoder().config().image_size;
  const auto& sched = spec.schedule;
  const std::size_t batch_size = static_cast<std::size_t>(sched.batch_size);
  const long iterations =
      sched.epochs > 0
          ? static_cast<long>(sched.epochs) * static_cast<long>((data.train.size() + batch_size - 1) / batch_size)
          : sched.iterations;

  double pos_weight = 1.0;
  if (spec.kind == TaskKind::change_detection) {
    double pos = 0, all = 0;
    for (const auto& s : data.train) {
      pos += static_cast<double>(std::count(s.dense.begin(), s.dense.end(), 1));
      all += static_cast<double>(s.dense.size());
    }
    pos_weight = pos > 0 ? std::clamp((all - pos) / pos, 1.0, 10.0) : 1.0;
  }

  AdamW adamw(AdamW::Options{0.9, 0.999, 1e-8, sched.weight_decay});
  Sgd sgd(sched.momentum, sched.weight_decay);
  Rng rng = Rng(spec.seed).fork(2);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  FinetuneResult result{std::move(model), {}, {}};
  TaskModel& m = result.model;
  const long warmup = std::lround(sched.warmup_fraction * static_cast<double>(iterations));
  for (long it = 0; it < iterations; ++it) {
    std::vector<const TaskSample*> samples;
    while (samples.size() < std::min(batch_size, data.train.size())) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
        cursor = 0;
      }
      samples.push_back(&data.train[order[cursor++]]);
    }
    const Batch batch = make_batch(samples, spec, size, &rng);
    const auto loss = task_loss(m, batch, pos_weight);
    check(std::isfinite(loss->value[0]), Errc::non_finite_loss,
          data.name + ": non-finite finetuning loss at iteration " + std::to_string(it));
    ag::backward(loss);
    auto slots = m.slots();
    clip_grad_norm(slots, 5.0);
    const double lr = sched.lr_schedule == "poly" ? poly_lr(it, iterations, sched.lr)
                                                  : cosine_lr(it, iterations, warmup, sched.lr, sched.lr * 0.01);
    if (sched.optimizer == "sgd")
      sgd.step(slots, lr);
    else
      adamw.step(slots, lr);
    for (auto& s : slots) s.var->grad.clear();
    result.train_loss.push_back(loss->value[0]);
  }
  result.metrics = evaluate(m, data, method);
  return result;
}

void save_task_model(const std::filesystem::path& path, const TaskModel& model) {
  Checkpoint ck;
  ck.config = {{"kind", "task-model"}, {"encoder", model.encoder().config()}, {"task", model.spec()}};
  ck.tensors = model.encoder().params().export_float("encoder.");
  ck.tensors.merge(model.head().export_float("head."));
  save_container(path, ck);
}

TaskModel load_task_model(const std::filesystem::path& path) {
  const Checkpoint ck = load_container(path);
  check(ck.config.value("kind", std::string()) == "task-model", Errc::corrupt_container,
        path.string() + " is not a finetuned task model");
  TaskModel model(encoder_from_checkpoint<float>(ck), ck.config.at("task").get<TaskSpec>(), 0);
  import_float(model.head(), ck.tensors, "head.", true);
  return model;
}

FinetuneResult finetune(const std::filesystem::path& checkpoint, const TaskSpec& spec, const TaskDataset& data,
                        const std::string& method) {
  return finetune(load_encoder<float>(checkpoint), spec, data, method);
}

}  // namespace gfm
