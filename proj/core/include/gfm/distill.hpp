#pragma once

#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "gfm/encoder.hpp"

namespace gfm {

// SI: both branches see the same image. TP: the teacher sees one image of a
// co-located temporal pair and the student the other.
enum class InputMode { same_image, temporal_pair };

std::string to_string(InputMode mode);
InputMode input_mode_from_string(const std::string& s);

struct DistillConfig {
  int stage = 3;  // 1-based stage whose output is distilled
  std::string teacher_checkpoint;
  InputMode input_mode = InputMode::same_image;
  double eps = 1e-12;        // guard inside the L2 normalisation
  bool strict_zero = false;  // raise zero-vector instead of guarding

  void validate(int num_stages) const;
};

void to_json(nlohmann::json& j, const DistillConfig& c);
void from_json(const nlohmann::json& j, DistillConfig& c);

// Bias-free per-token linear map from the student's stage width to the
// teacher's.
template <typename T>
class ProjectionHead {
 public:
  ProjectionHead(int student_dim, int teacher_dim, std::uint64_t seed);

  ag::Var<T> forward(const ag::Var<T>& feature) const;

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  int out_dim() const { return teacher_dim_; }

 private:
  int student_dim_, teacher_dim_;
  ParamSet<T> params_;
};

// Stage-`stage` output of a frozen teacher on an unmasked batch. Throws
// teacher-not-frozen for a trainable encoder. Runs without recording a graph.
template <typename T>
ag::Var<T> teacher_feature(const Encoder<T>& teacher, const Tensor<T>& images, int stage);

// Negative cosine similarity between L2-normalised P(student) and teacher,
// per spatial token, averaged over tokens and batch. Result lies in [-1, 1].
template <typename T>
ag::Var<T> feat_loss(const ag::Var<T>& student_feature, const ag::Var<T>& teacher_feature,
                     const ProjectionHead<T>& projection, double eps = 1e-12, bool strict_zero = false);

// Unweighted sum of both objectives; throws non-finite on NaN/inf input.
double total_loss(double l_mim, double l_feat);
template <typename T>
ag::Var<T> total_loss(const ag::Var<T>& l_mim, const ag::Var<T>& l_feat);

struct BranchBatch {
  Tensor<float> images;                  // [B, H, W, C]
  std::optional<Tensor<float>> partners;  // co-located, temporally distinct counterparts
};

struct BranchInputs {
  Tensor<float> teacher;  // unmasked
  Tensor<float> student;  // masked by the caller before embedding
};

// Throws tp-without-pairs for temporal-pair mode without partners.
BranchInputs make_branch_inputs(const BranchBatch& batch, InputMode mode);

}  // namespace gfm
