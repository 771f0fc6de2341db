#include "gfm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gfm/checkpoint.hpp"
#include "gfm/error.hpp"

namespace gfm {

std::string to_string(Objective o) {
  switch (o) {
    case Objective::multi: return "multi";
    case Objective::mim_only: return "mim-only";
    case Objective::distill_only: return "distill-only";
  }
  return "multi";
}

std::string to_string(StudentInit s) { return s == StudentInit::random ? "random" : "teacher-checkpoint"; }

Objective objective_from_string(const std::string& s) {
  if (s == "multi") return Objective::multi;
  if (s == "mim-only" || s == "mim_only") return Objective::mim_only;
  if (s == "distill-only" || s == "distill_only") return Objective::distill_only;
  fail(Errc::invalid_config, "unknown objective '" + s + "' (expected multi, mim-only or distill-only)");
}

StudentInit student_init_from_string(const std::string& s) {
  if (s == "random") return StudentInit::random;
  if (s == "teacher-checkpoint" || s == "teacher_checkpoint" || s == "teacher") return StudentInit::teacher_checkpoint;
  fail(Errc::invalid_config, "unknown student init '" + s + "' (expected random or teacher-checkpoint)");
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const std::string& what) { check(ok, Errc::invalid_config, what); };
  encoder.validate();
  need(epochs >= 1, "epochs must be >= 1");
  need(batch_size >= 1, "batch_size must be >= 1");
  need(base_lr > 0 && std::isfinite(base_lr), "base_lr must be > 0");
  need(min_lr_ratio >= 0 && min_lr_ratio <= 1, "min_lr_ratio must lie in [0, 1]");
  need(weight_decay >= 0, "weight_decay must be >= 0");
  need(warmup_epochs >= 0, "warmup_epochs must be >= 0");
  need(schedule == "cosine" || schedule == "constant", "schedule must be cosine or constant");
  need(mask_ratio > 0 && mask_ratio < 1, "mask_ratio must lie in (0, 1)");
  distill.validate(encoder.num_stages());
  if (needs_teacher()) need(!distill.teacher_checkpoint.empty(), "this objective needs distill.teacher_checkpoint");
}

double TrainConfig::peak_lr() const { return scale_lr ? base_lr * batch_size / 2048.0 : base_lr; }

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"encoder", c.encoder},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"base_lr", c.base_lr},
                     {"scale_lr", c.scale_lr},
                     {"min_lr_ratio", c.min_lr_ratio},
                     {"weight_decay", c.weight_decay},
                     {"warmup_epochs", c.warmup_epochs},
                     {"schedule", c.schedule},
                     {"grad_clip", c.grad_clip},
                     {"mask_ratio", c.mask_ratio},
                     {"augment", c.augment},
                     {"seed", c.seed},
                     {"objective", to_string(c.objective)},
                     {"student_init", to_string(c.student_init)},
                     {"distill", c.distill}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.encoder = j.contains("encoder") ? j["encoder"].get<EncoderConfig>() : d.encoder;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.base_lr = j.value("base_lr", d.base_lr);
  c.scale_lr = j.value("scale_lr", d.scale_lr);
  c.min_lr_ratio = j.value("min_lr_ratio", d.min_lr_ratio);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.warmup_epochs = j.value("warmup_epochs", d.warmup_epochs);
  c.schedule = j.value("schedule", d.schedule);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.mask_ratio = j.value("mask_ratio", d.mask_ratio);
  c.augment = j.value("augment", d.augment);
  c.seed = j.value("seed", d.seed);
  c.objective = objective_from_string(j.value("objective", to_string(d.objective)));
  c.student_init = student_init_from_string(j.value("student_init", to_string(d.student_init)));
  c.distill = j.contains("distill") ? j["distill"].get<DistillConfig>() : d.distill;
}

// ---------------------------------------------------------------------------

std::vector<OptimSlot> PretrainState::slots() {
  std::vector<OptimSlot> out;
  collect_slots(out, student.params(), "encoder.");
  collect_slots(out, head.params(), "head.");
  if (projection) collect_slots(out, projection->params(), "");
  return out;
}

namespace {

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream) { return Rng(seed).fork(stream).next(); }

ReconstructionHead<float> make_head(const EncoderConfig& enc, std::uint64_t seed) {
  const int final_side = enc.stage_sides().back();
  return ReconstructionHead<float>(enc.dims.back(), enc.image_size / final_side, enc.in_channels, seed);
}

double lr_at(const PretrainState& s) {
  const double peak = s.config.peak_lr();
  if (s.config.schedule == "constant") return peak;
  return cosine_lr(s.step, s.total_steps, s.warmup_steps, peak, peak * s.config.min_lr_ratio);
}

std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

PretrainState make_pretrain_state(const TrainConfig& config, long steps_per_epoch) {
  config.validate();
  TrainConfig cfg = config;
  std::optional<Checkpoint> teacher_ck;
  if (cfg.needs_teacher()) teacher_ck = load_container(cfg.distill.teacher_checkpoint);

  std::optional<Encoder<float>> student;
  if (cfg.student_init == StudentInit::teacher_checkpoint) {
    student.emplace(encoder_from_checkpoint<float>(*teacher_ck, 0));
    check(student->built_stages() == student->config().num_stages(), Errc::invalid_config,
          "teacher checkpoint is truncated; a student cannot be initialised from it");
    cfg.encoder = student->config();
  } else {
    student.emplace(cfg.encoder, cfg.seed);
  }
  cfg.distill.validate(cfg.encoder.num_stages());

  std::optional<Encoder<float>> teacher;
  std::optional<ProjectionHead<float>> projection;
  if (cfg.objective != Objective::mim_only) {
    teacher.emplace(encoder_from_checkpoint<float>(*teacher_ck, cfg.distill.stage));
    teacher->freeze();
    const auto& tc = teacher->config();
    check(tc.image_size == cfg.encoder.image_size && tc.in_channels == cfg.encoder.in_channels, Errc::invalid_config,
          "teacher and student must share image size and channels");
    const int l = cfg.distill.stage - 1;
    projection.emplace(cfg.encoder.dims[l], tc.dims[l], sub_seed(cfg.seed, 2));
  }

  PretrainState state{cfg,
                      std::move(*student),
                      std::move(teacher),
                      std::move(projection),
                      make_head(cfg.encoder, sub_seed(cfg.seed, 1)),
                      AdamW(AdamW::Options{0.9, 0.999, 1e-8, cfg.weight_decay}),
                      0,
                      1,
                      0};
  state.total_steps = std::max(1L, static_cast<long>(cfg.epochs) * steps_per_epoch);
  state.warmup_steps = std::lround(cfg.warmup_epochs * static_cast<double>(steps_per_epoch));
  return state;
}

LossBreakdown pretrain_step(PretrainState& state, const BranchBatch& batch) {
  const TrainConfig& cfg = state.config;
  const EncoderConfig& enc = state.student.config();
  const bool use_teacher = cfg.objective != Objective::mim_only;
  const bool use_mim = cfg.objective != Objective::distill_only;

  const BranchInputs inputs =
      use_teacher ? make_branch_inputs(batch, cfg.distill.input_mode) : BranchInputs{batch.images, batch.images};
  const std::size_t b = inputs.student.dim(0);
  check(inputs.student.rank() == 4 && inputs.student.dim(1) == static_cast<std::size_t>(enc.image_size),
        Errc::shape_mismatch, "batch shape " + shape_str(inputs.student.shape));

  Rng rng = Rng(cfg.seed).fork(0x5eed0000ULL + static_cast<std::uint64_t>(state.step));
  const MaskGrid mask = sample_mask_batch(b, enc.mask_grid_side(), cfg.mask_ratio, rng);
  ForwardOptions options{true, &rng};
  const auto pyramid = state.student.forward(ag::make_var(inputs.student), &mask, options);

  LossBreakdown out;
  ag::Var<float> l_mim, l_feat, total;
  if (use_mim) {
    const auto& feature = pyramid.final_normed ? pyramid.final_normed : pyramid.stages.back();
    l_mim = mim_loss(inputs.student, state.head.forward(feature), mask, static_cast<std::size_t>(enc.mask_patch_size));
    out.l_mim = l_mim->value[0];
  }
  if (use_teacher) {
    const int stage = cfg.distill.stage;
    const auto target = teacher_feature(*state.teacher, inputs.teacher, stage);
    l_feat = feat_loss(pyramid.stages[stage - 1], target, *state.projection, cfg.distill.eps, cfg.distill.strict_zero);
    out.l_feat = l_feat->value[0];
  }
  total = use_mim && use_teacher ? total_loss(l_mim, l_feat) : use_mim ? l_mim : l_feat;
  out.total = total->value[0];
  if (!std::isfinite(out.total)) {
    std::ostringstream msg;
    msg << "step " << state.step << ": l_mim=" << (out.l_mim ? fmt_num(*out.l_mim) : "-")
        << " l_feat=" << (out.l_feat ? fmt_num(*out.l_feat) : "-") << " total=" << fmt_num(out.total);
    fail(Errc::non_finite_loss, msg.str());
  }

  ag::backward(total);
  auto slots = state.slots();
  out.grad_norm = clip_grad_norm(slots, cfg.grad_clip);
  out.lr = lr_at(state);
  state.optimizer.step(slots, out.lr);
  for (auto& s : slots) s.var->grad.clear();
  ++state.step;
  return out;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const PretrainState& state, const std::filesystem::path& path) {
  Checkpoint ck;
  ck.config = nlohmann::json{{"kind", "pretrain-state"},
                             {"encoder", state.student.config()},
                             {"stages", state.student.built_stages()},
                             {"train", state.config},
                             {"step", state.step},
                             {"total_steps", state.total_steps},
                             {"warmup_steps", state.warmup_steps},
                             {"optimizer_steps", state.optimizer.steps()}};
  ck.tensors = state.student.params().export_float("encoder.");
  ck.tensors.merge(state.head.params().export_float("head."));
  if (state.projection) ck.tensors.merge(state.projection->params().export_float(""));
  ck.tensors.merge(state.optimizer.export_state());
  save_container(path, ck);
}

PretrainState load_checkpoint(const std::filesystem::path& path) {
  const Checkpoint ck = load_container(path);
  check(ck.config.contains("train"), Errc::corrupt_container, path.string() + " is not a training checkpoint");
  TrainConfig cfg;
  try {
    cfg = ck.config["train"].get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::corrupt_container, std::string("bad train config: ") + e.what());
  }
  // the student weights come from this file, so never re-read them elsewhere
  cfg.student_init = StudentInit::random;
  cfg.encoder = ck.config["encoder"].get<EncoderConfig>();
  PretrainState state = make_pretrain_state(cfg);
  state.config.student_init = ck.config["train"].get<TrainConfig>().student_init;
  import_float(state.student.params(), ck.tensors, "encoder.", true);
  import_float(state.head.params(), ck.tensors, "head.", true);
  if (state.projection) import_float(state.projection->params(), ck.tensors, "", true);
  state.optimizer.import_state(ck.tensors, ck.config.value("optimizer_steps", 0L));
  state.step = ck.config.value("step", 0L);
  state.total_steps = ck.config.value("total_steps", 1L);
  state.warmup_steps = ck.config.value("warmup_steps", 0L);
  return state;
}

// ---------------------------------------------------------------------------

double carbon_estimate(double device_hours, double power_kw, double intensity_kg_per_kwh) {
  check(device_hours >= 0 && power_kw >= 0 && intensity_kg_per_kwh >= 0, Errc::negative_input,
        "carbon inputs must be non-negative");
  return device_hours * power_kw * intensity_kg_per_kwh;
}

RunLedger make_ledger(double wall_clock_s, int devices, double power_kw, double intensity) {
  check(wall_clock_s >= 0 && devices >= 0, Errc::negative_input, "ledger inputs must be non-negative");
  RunLedger l;
  l.wall_clock_s = wall_clock_s;
  l.devices = devices;
  l.device_hours = wall_clock_s / 3600.0 * devices;
  l.device_power_kw = power_kw;
  l.carbon_intensity = intensity;
  l.estimated_kg_co2 = carbon_estimate(l.device_hours, power_kw, intensity);
  return l;
}

void to_json(nlohmann::json& j, const RunLedger& l) {
  j = nlohmann::json{{"wall_clock_s", l.wall_clock_s},
                     {"devices", l.devices},
                     {"device_hours", l.device_hours},
                     {"device_power_kw", l.device_power_kw},
                     {"carbon_intensity_kg_per_kwh", l.carbon_intensity},
                     {"estimated_kg_co2", l.estimated_kg_co2}};
}

void write_ledger_csv(const std::filesystem::path& path, const RunLedger& l) {
  std::ofstream os(path, std::ios::trunc);
  check(static_cast<bool>(os), Errc::checkpoint_io, "cannot write " + path.string());
  os << "wall_clock_s,devices,device_hours,device_power_kw,carbon_intensity_kg_per_kwh,estimated_kg_co2\n"
     << fmt_num(l.wall_clock_s) << ',' << l.devices << ',' << fmt_num(l.device_hours) << ','
     << fmt_num(l.device_power_kw) << ',' << fmt_num(l.carbon_intensity) << ',' << fmt_num(l.estimated_kg_co2) << '\n';
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochLoss>& curve) {
  std::ofstream os(path, std::ios::trunc);
  check(static_cast<bool>(os), Errc::checkpoint_io, "cannot write " + path.string());
  os << "epoch,l_mim,l_feat,total,lr\n";
  for (const auto& e : curve)
    os << e.epoch << ',' << (e.l_mim ? fmt_num(*e.l_mim) : "") << ',' << (e.l_feat ? fmt_num(*e.l_feat) : "") << ','
       << fmt_num(e.total) << ',' << fmt_num(e.lr) << '\n';
}

std::vector<EpochLoss> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  check(static_cast<bool>(is), Errc::io_error, "cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<EpochLoss> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    while (f.size() < 5) f.emplace_back();
    EpochLoss e;
    try {
      e.epoch = std::stoi(f[0]);
      if (!f[1].empty()) e.l_mim = std::stod(f[1]);
      if (!f[2].empty()) e.l_feat = std::stod(f[2]);
      e.total = std::stod(f[3]);
      e.lr = std::stod(f[4]);
    } catch (const std::exception&) {
      fail(Errc::parse_error, path.string() + ": bad row '" + line + "'");
    }
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------

PretrainData::PretrainData(const DatasetManifest& manifest, const EncoderConfig& encoder)
    : image_size_(encoder.image_size), channels_(encoder.in_channels) {
  images_.reserve(manifest.size());
  for (const auto& rec : manifest.records) {
    Image img = read_png(manifest.resolve(rec.path));
    check(img.channels == channels_, Errc::incompatible_channels,
          rec.path + " has " + std::to_string(img.channels) + " channels, encoder expects " +
              std::to_string(channels_));
    images_.push_back(std::move(img));
  }
  for (const auto& group : manifest.temporal_groups()) {
    // earliest acquisition paired with the first later one
    std::size_t first = group.front();
    for (auto i : group)
      if (manifest.records[i].timestamp.value_or("") < manifest.records[first].timestamp.value_or("")) first = i;
    for (auto i : group)
      if (manifest.records[i].timestamp.value_or("") != manifest.records[first].timestamp.value_or("")) {
        pairs_.emplace_back(first, i);
        break;
      }
  }
}

Image PretrainData::prepare(const Image& img, const AugmentParams* aug) const {
  if (aug) return apply_augment(img, *aug, image_size_);
  if (img.height == image_size_ && img.width == image_size_) return img;
  return resize_bilinear(img, image_size_, image_size_);
}

std::vector<BranchBatch> PretrainData::epoch(InputMode mode, int batch_size, bool augment, Rng& rng) const {
  const bool tp = mode == InputMode::temporal_pair;
  const std::size_t units = tp ? pairs_.size() : images_.size();
  std::vector<std::size_t> order(units);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = units; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);

  std::vector<BranchBatch> batches;
  for (std::size_t start = 0; start < units; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(units, start + static_cast<std::size_t>(batch_size));
    std::vector<Image> first, second;
    for (std::size_t k = start; k < end; ++k) {
      std::optional<AugmentParams> aug;
      if (tp) {
        auto [a, b] = pairs_[order[k]];
        if (rng.bernoulli(0.5)) std::swap(a, b);
        if (augment) aug = draw_augment(images_[a].height, images_[a].width, rng);
        first.push_back(prepare(images_[a], aug ? &*aug : nullptr));
        second.push_back(prepare(images_[b], aug ? &*aug : nullptr));
      } else {
        const Image& img = images_[order[k]];
        if (augment) aug = draw_augment(img.height, img.width, rng);
        first.push_back(prepare(img, aug ? &*aug : nullptr));
      }
    }
    BranchBatch batch;
    batch.images = stack_images(first);
    if (tp) batch.partners = stack_images(second);
    batches.push_back(std::move(batch));
  }
  return batches;
}

// ---------------------------------------------------------------------------

PretrainResult run_pretraining(const TrainConfig& config, const DatasetManifest& manifest,
                               const std::filesystem::path& out_dir, const StepCallback& on_step) {
  const auto started = std::chrono::steady_clock::now();
  PretrainState state = make_pretrain_state(config);
  const TrainConfig& cfg = state.config;
  check(!manifest.records.empty(), Errc::data_exhausted, "pretraining manifest is empty");
  const PretrainData data(manifest, cfg.encoder);
  const InputMode mode = cfg.objective == Objective::mim_only ? InputMode::same_image : cfg.distill.input_mode;
  if (mode == InputMode::temporal_pair)
    check(data.pair_count() > 0, Errc::tp_without_pairs, "manifest has no co-located temporal pairs");
  const std::size_t units = mode == InputMode::temporal_pair ? data.pair_count() : data.size();
  const long steps_per_epoch =
      static_cast<long>((units + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size));
  check(steps_per_epoch > 0, Errc::data_exhausted, "no batches available");
  state.total_steps = static_cast<long>(cfg.epochs) * steps_per_epoch;
  state.warmup_steps = std::lround(cfg.warmup_epochs * static_cast<double>(steps_per_epoch));

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  check(!ec, Errc::checkpoint_io, "cannot create " + out_dir.string());

  PretrainResult result;
  if (state.teacher) result.teacher_hash_before = state.teacher->content_hash();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng erng = Rng(cfg.seed).fork(0xe90c0000ULL + static_cast<std::uint64_t>(epoch));
    const auto batches = data.epoch(mode, cfg.batch_size, cfg.augment, erng);
    double sum_mim = 0, sum_feat = 0, sum_total = 0, seen = 0;
    EpochLoss row;
    row.epoch = epoch;
    for (const auto& batch : batches) {
      const LossBreakdown lb = pretrain_step(state, batch);
      const double n = static_cast<double>(batch.images.dim(0));
      if (lb.l_mim) sum_mim += *lb.l_mim * n;
      if (lb.l_feat) sum_feat += *lb.l_feat * n;
      sum_total += lb.total * n;
      seen += n;
      row.lr = lb.lr;
      if (on_step) on_step(epoch, state.step, lb);
    }
    if (cfg.objective != Objective::distill_only) row.l_mim = sum_mim / seen;
    if (cfg.objective != Objective::mim_only) row.l_feat = sum_feat / seen;
    row.total = sum_total / seen;
    result.curve.push_back(row);
  }

  result.checkpoint = out_dir / "checkpoint.bin";
  result.loss_csv = out_dir / "loss.csv";
  result.ledger_csv = out_dir / "ledger.csv";
  save_checkpoint(state, result.checkpoint);
  write_loss_csv(result.loss_csv, result.curve);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  result.ledger = make_ledger(elapsed);
  write_ledger_csv(result.ledger_csv, result.ledger);
  result.student_hash = state.student.content_hash();
  if (state.teacher) result.teacher_hash_after = state.teacher->content_hash();
  result.steps = state.step;
  return result;
}

}  // namespace gfm
