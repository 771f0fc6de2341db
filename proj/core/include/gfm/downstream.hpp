#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gfm/encoder.hpp"
#include "gfm/geodata.hpp"
#include "gfm/optim.hpp"

namespace gfm {

enum class TaskKind { classification, multilabel, segmentation, change_detection, super_resolution };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);
// Metrics reported for a task kind, in report order.
std::vector<std::string> metrics_for(TaskKind kind);

struct FinetuneSchedule {
  int iterations = 200;
  int epochs = 0;  // > 0: iterations = epochs * ceil(train / batch_size)
  int batch_size = 16;
  std::string optimizer = "adamw";     // "adamw" or "sgd"
  std::string lr_schedule = "cosine";  // "cosine" (with warmup) or "poly"
  double lr = 1e-3;
  double weight_decay = 0.05;
  double momentum = 0.9;
  double warmup_fraction = 0.05;
  bool flip = true;  // random horizontal flips during training
};

struct TaskSpec {
  TaskKind kind = TaskKind::classification;
  std::string dataset = "task";
  std::vector<std::string> metrics;  // empty: metrics_for(kind)
  int num_classes = 4;               // classes, label kinds, or 2 for change
  int decoder_dim = 32;
  bool abs_diff = false;  // change detection: |f1 - f2| instead of f1 - f2
  int scale_factor = 4;   // super-resolution
  bool residual = true;   // super-resolution: add bicubic upsample of the input
  int sr_channels = 16;   // super-resolution: width before the final upsampler
  int image_size = 0;     // encoder input resolution; 0 keeps the checkpoint's
  FinetuneSchedule schedule;
  std::uint64_t seed = 0;

  // Throws invalid-config (e.g. metrics incompatible with the task kind).
  void validate() const;
  std::vector<std::string> metric_names() const { return metrics.empty() ? metrics_for(kind) : metrics; }

  // Desk-scale profile: toy iteration counts, same optimizer family and
  // schedule shape as the full-scale profile.
  static TaskSpec desk(TaskKind kind);
  // Full-scale finetuning profile.
  static TaskSpec full_scale(TaskKind kind);
};

void to_json(nlohmann::json& j, const TaskSpec& s);
void from_json(const nlohmann::json& j, TaskSpec& s);

struct MetricResult {
  std::string method;
  std::string dataset;
  TaskKind kind = TaskKind::classification;
  std::map<std::string, double> scores;
};

void to_json(nlohmann::json& j, const MetricResult& r);
void from_json(const nlohmann::json& j, MetricResult& r);

struct TaskSample {
  Image image;
  std::optional<Image> partner;  // change detection: second acquisition
  int label = -1;                // classification
  std::vector<int> labels;       // multilabel: present class ids
  std::vector<int> dense;        // segmentation classes or change mask, H x W
  std::optional<Image> target;   // super-resolution high-res tile
};

struct TaskDataset {
  std::string name;
  TaskKind kind = TaskKind::classification;
  int channels = 3;
  std::vector<TaskSample> train, val;
};

// Reads a task manifest (split field selects train/val).
TaskDataset load_task_dataset(const DatasetManifest& manifest, TaskKind kind, const std::string& name);

// Fixed resampling maps for [side, side, C] grids (half-pixel sampling,
// clamped borders).
ag::SparseMapPtr bilinear_upsample_map(std::size_t in_side, std::size_t out_side, std::size_t channels);
// Cubic convolution with a = -0.75.
ag::SparseMapPtr bicubic_upsample_map(std::size_t in_side, std::size_t out_side, std::size_t channels);
// 3x3 neighbourhoods with zero padding: [side, side, C] -> [side, side, 9 C].
ag::SparseMapPtr im2col3x3_map(std::size_t side, std::size_t channels);

// Bicubic upsampling of an image batch [B, H, W, C].
Tensor<float> bicubic_upsample(const Tensor<float>& images, int factor);

// Encoder plus task head. Head layout by kind:
//   classification / multilabel: mean-pooled final features -> linear
//   segmentation / change detection: per-stage 1x1 projection, upsample to
//     the stage-1 grid, sum, GELU, 3x3 conv classifier, bilinear upsample
//   super-resolution: the same fusion, linear + pixel shuffle to input
//     resolution, GELU, 3x3 conv + pixel shuffle by the scale factor
class TaskModel {
 public:
  TaskModel(Encoder<float> encoder, const TaskSpec& spec, std::uint64_t seed);

  const TaskSpec& spec() const { return spec_; }
  Encoder<float>& encoder() { return encoder_; }
  const Encoder<float>& encoder() const { return encoder_; }
  ParamSet<float>& head() { return head_; }
  const ParamSet<float>& head() const { return head_; }

  // Task output: logits [B, K] (classification / multilabel), [B, H, W, K]
  // (segmentation), [B, H, W, 1] (change), image [B, sH, sW, C] (super-res).
  ag::Var<float> forward(const Tensor<float>& images, const Tensor<float>* partners = nullptr) const;

  // Per-stage feature differences between two acquisitions.
  std::vector<ag::Var<float>> feature_differences(const Tensor<float>& t1, const Tensor<float>& t2) const;
  ag::Var<float> change_logits(const Tensor<float>& t1, const Tensor<float>& t2) const;
  ag::Var<float> superres(const Tensor<float>& low_res, bool residual) const;

  // Zeroes the last super-resolution layer (weights and bias).
  void zero_decoder();

  std::vector<OptimSlot> slots();

 private:
  ag::Var<float> fuse(const std::vector<ag::Var<float>>& stages) const;
  ag::Var<float> dense_logits(const std::vector<ag::Var<float>>& stages) const;
  ag::Var<float> conv3x3(const ag::Var<float>& x, std::size_t weight, std::size_t bias) const;

  TaskSpec spec_;
  Encoder<float> encoder_;
  ParamSet<float> head_;
  std::vector<std::size_t> proj_w_, proj_b_;
  std::size_t w0_ = 0, b0_ = 0, w1_ = 0, b1_ = 0;
};

ag::Var<float> change_detect_forward(const TaskModel& model, const Tensor<float>& t1, const Tensor<float>& t2);
// Throws scale-mismatch when the input does not match the encoder resolution.
ag::Var<float> superres_forward(const TaskModel& model, const Tensor<float>& low_res, bool residual);

struct FinetuneResult {
  TaskModel model;
  MetricResult metrics;
  std::vector<double> train_loss;  // per iteration
};

// Finetunes end to end and evaluates on the val split. An encoder with fewer
// input channels than the data is widened first; fewer data channels than the
// encoder throws incompatible-channels. Empty train/val splits throw
// empty-split.
FinetuneResult finetune(const Encoder<float>& init, const TaskSpec& spec, const TaskDataset& data,
                        const std::string& method = "model");
FinetuneResult finetune(const std::filesystem::path& checkpoint, const TaskSpec& spec, const TaskDataset& data,
                        const std::string& method = "model");

// Per-sample val outputs, in val order.
struct Predictions {
  TaskKind kind = TaskKind::classification;
  std::vector<int> labels, truth;           // classification
  std::vector<std::vector<double>> scores;  // multilabel sigmoid per class
  std::vector<std::vector<int>> masks;      // segmentation classes / change mask, H x W
  int height = 0, width = 0;
  std::vector<Image> images;                // super-resolution outputs clamped to [0, 1]
};

MetricResult evaluate(const TaskModel& model, const TaskDataset& data, const std::string& method,
                      Predictions* predictions = nullptr);

// predictions.csv for classification and multilabel; masks/<i>.png (class id,
// change 0/255) or images/<i>.png for dense tasks. Returns the files written.
std::vector<std::filesystem::path> write_predictions(const std::filesystem::path& dir, const Predictions& p);

// Container with config {"kind": "task-model", "encoder", "task"} and tensors
// "encoder.*", "head.*".
void save_task_model(const std::filesystem::path& path, const TaskModel& model);
TaskModel load_task_model(const std::filesystem::path& path);

}  // namespace gfm
