#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gfm/distill.hpp"
#include "gfm/encoder.hpp"
#include "gfm/geodata.hpp"
#include "gfm/mim.hpp"
#include "gfm/optim.hpp"

namespace gfm {

enum class Objective { multi, mim_only, distill_only };
enum class StudentInit { random, teacher_checkpoint };

std::string to_string(Objective o);
std::string to_string(StudentInit s);
Objective objective_from_string(const std::string& s);
StudentInit student_init_from_string(const std::string& s);

struct TrainConfig {
  EncoderConfig encoder;
  int epochs = 100;
  int batch_size = 2048;
  double base_lr = 8e-4;
  bool scale_lr = true;  // lr = base_lr * batch_size / 2048
  double min_lr_ratio = 0.01;
  double weight_decay = 0.05;
  double warmup_epochs = 10;
  std::string schedule = "cosine";
  double grad_clip = 5.0;
  double mask_ratio = 0.6;
  bool augment = true;
  std::uint64_t seed = 0;
  Objective objective = Objective::multi;
  StudentInit student_init = StudentInit::random;
  DistillConfig distill;

  // Throws invalid-config.
  void validate() const;
  double peak_lr() const;
  bool needs_teacher() const {
    return objective != Objective::mim_only || student_init == StudentInit::teacher_checkpoint;
  }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossBreakdown {
  std::optional<double> l_mim;
  std::optional<double> l_feat;
  double total = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

// Everything mutated by training. The teacher is frozen and shared by value.
struct PretrainState {
  TrainConfig config;
  Encoder<float> student;
  std::optional<Encoder<float>> teacher;
  std::optional<ProjectionHead<float>> projection;
  ReconstructionHead<float> head;
  AdamW optimizer;
  long step = 0;
  long total_steps = 1;
  long warmup_steps = 0;

  std::vector<OptimSlot> slots();
};

// Builds the initial state. The teacher (stages 1..L) comes from
// distill.teacher_checkpoint when the objective or student init needs it;
// steps_per_epoch sizes the learning-rate schedule.
PretrainState make_pretrain_state(const TrainConfig& config, long steps_per_epoch = 1);

// One optimiser update on L_MIM + L_feat (per objective). Throws
// non-finite-loss without touching the parameters.
LossBreakdown pretrain_step(PretrainState& state, const BranchBatch& batch);

// Training state container: student "encoder.*", "head.*", "projection.*",
// optimiser moments "optim.*"; config holds the train config and step.
void save_checkpoint(const PretrainState& state, const std::filesystem::path& path);
PretrainState load_checkpoint(const std::filesystem::path& path);

struct RunLedger {
  double wall_clock_s = 0.0;
  int devices = 1;
  double device_hours = 0.0;
  double device_power_kw = 0.25;
  double carbon_intensity = 0.57;  // kg CO2-eq per kWh
  double estimated_kg_co2 = 0.0;
};

// device_hours * power_kw * intensity. Throws negative-input.
double carbon_estimate(double device_hours, double power_kw, double intensity_kg_per_kwh);
RunLedger make_ledger(double wall_clock_s, int devices = 1, double power_kw = 0.25, double intensity = 0.57);

void to_json(nlohmann::json& j, const RunLedger& l);
void write_ledger_csv(const std::filesystem::path& path, const RunLedger& ledger);

struct EpochLoss {
  int epoch = 0;
  std::optional<double> l_mim;
  std::optional<double> l_feat;
  double total = 0.0;
  double lr = 0.0;
};

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochLoss>& curve);
std::vector<EpochLoss> read_loss_csv(const std::filesystem::path& path);

// In-memory pretraining corpus: resized images plus temporal pairs.
class PretrainData {
 public:
  PretrainData(const DatasetManifest& manifest, const EncoderConfig& encoder);

  std::size_t size() const { return images_.size(); }
  std::size_t pair_count() const { return pairs_.size(); }
  // Batches for one epoch in a seeded order; the final batch may be short.
  // Each unit is an image (SI) or a temporal pair (TP).
  std::vector<BranchBatch> epoch(InputMode mode, int batch_size, bool augment, Rng& rng) const;

 private:
  Image prepare(const Image& img, const AugmentParams* aug) const;

  int image_size_, channels_;
  std::vector<Image> images_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
};

struct PretrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_csv;
  std::filesystem::path ledger_csv;
  RunLedger ledger;
  std::vector<EpochLoss> curve;
  std::uint64_t student_hash = 0;
  std::optional<std::uint64_t> teacher_hash_before, teacher_hash_after;
  long steps = 0;
};

using StepCallback = std::function<void(int epoch, long step, const LossBreakdown&)>;

// Trains for config.epochs and writes checkpoint.bin, loss.csv and ledger.csv
// under out_dir. Throws checkpoint-io, data-exhausted.
PretrainResult run_pretraining(const TrainConfig& config, const DatasetManifest& manifest,
                               const std::filesystem::path& out_dir, const StepCallback& on_step = {});

}  // namespace gfm
