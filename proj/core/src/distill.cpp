#include "gfm/distill.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "gfm/error.hpp"

namespace gfm {

std::string to_string(InputMode mode) { return mode == InputMode::same_image ? "SI" : "TP"; }

InputMode input_mode_from_string(const std::string& s) {
  if (s == "SI" || s == "si" || s == "same_image") return InputMode::same_image;
  if (s == "TP" || s == "tp" || s == "temporal_pair") return InputMode::temporal_pair;
  fail(Errc::invalid_config, "unknown input mode '" + s + "' (expected SI or TP)");
}

void DistillConfig::validate(int num_stages) const {
  check(stage >= 1 && stage <= num_stages, Errc::invalid_config,
        "distillation stage " + std::to_string(stage) + " outside 1.." + std::to_string(num_stages));
  check(eps > 0, Errc::invalid_config, "eps must be positive");
}

void to_json(nlohmann::json& j, const DistillConfig& c) {
  j = nlohmann::json{{"stage", c.stage},
                     {"teacher_checkpoint", c.teacher_checkpoint},
                     {"input_mode", to_string(c.input_mode)},
                     {"eps", c.eps},
                     {"strict_zero", c.strict_zero}};
}

void from_json(const nlohmann::json& j, DistillConfig& c) {
  DistillConfig d;
  c.stage = j.value("stage", d.stage);
  c.teacher_checkpoint = j.value("teacher_checkpoint", d.teacher_checkpoint);
  c.input_mode = input_mode_from_string(j.value("input_mode", std::string("SI")));
  c.eps = j.value("eps", d.eps);
  c.strict_zero = j.value("strict_zero", d.strict_zero);
}

template <typename T>
ProjectionHead<T>::ProjectionHead(int student_dim, int teacher_dim, std::uint64_t seed)
    : student_dim_(student_dim), teacher_dim_(teacher_dim) {
  check(student_dim > 0 && teacher_dim > 0, Errc::invalid_config, "projection sizes");
  Rng rng(seed);
  Tensor<T> w({static_cast<std::size_t>(student_dim), static_cast<std::size_t>(teacher_dim)});
  for (auto& v : w.data) v = static_cast<T>(rng.trunc_normal(0.02));
  params_.add("projection.weight", std::move(w), true);
}

template <typename T>
ag::Var<T> ProjectionHead<T>::forward(const ag::Var<T>& feature) const {
  check(feature->shape().back() == static_cast<std::size_t>(student_dim_), Errc::shape_mismatch,
        "projection expects width " + std::to_string(student_dim_) + ", got " + shape_str(feature->shape()));
  return ag::linear(feature, params_[0], ag::Var<T>{});
}

template <typename T>
ag::Var<T> teacher_feature(const Encoder<T>& teacher, const Tensor<T>& images, int stage) {
  check(teacher.frozen(), Errc::teacher_not_frozen, "teacher encoder must be frozen before use");
  check(stage >= 1 && stage <= teacher.built_stages(), Errc::invalid_config,
        "teacher has " + std::to_string(teacher.built_stages()) + " stages, requested " + std::to_string(stage));
  auto pyramid = teacher.forward(ag::make_var(images), nullptr, {});
  return pyramid.stages[static_cast<std::size_t>(stage - 1)];
}

template <typename T>
ag::Var<T> feat_loss(const ag::Var<T>& student_feature, const ag::Var<T>& teacher_feature,
                     const ProjectionHead<T>& projection, double eps, bool strict_zero) {
  auto projected = projection.forward(student_feature);
  check(projected->shape() == teacher_feature->shape(), Errc::shape_mismatch,
        "projected student " + shape_str(projected->shape()) + " vs teacher " + shape_str(teacher_feature->shape()));
  if (strict_zero) {
    const std::size_t C = projected->shape().back();
    for (const auto* t : {&projected->value, &teacher_feature->value})
      for (std::size_t r = 0; r < t->numel() / C; ++r) {
        double nn = 0;
        for (std::size_t c = 0; c < C; ++c) nn += static_cast<double>(t->data[r * C + c]) * t->data[r * C + c];
        check(std::sqrt(nn) >= 1e-12, Errc::zero_vector, "token " + std::to_string(r) + " has zero norm");
      }
  }
  return ag::neg_cosine(projected, teacher_feature, static_cast<T>(eps));
}

double total_loss(double l_mim, double l_feat) {
  check(std::isfinite(l_mim) && std::isfinite(l_feat), Errc::non_finite,
        "loss terms " + std::to_string(l_mim) + ", " + std::to_string(l_feat));
  return l_mim + l_feat;
}

template <typename T>
ag::Var<T> total_loss(const ag::Var<T>& l_mim, const ag::Var<T>& l_feat) {
  total_loss(static_cast<double>(l_mim->value[0]), static_cast<double>(l_feat->value[0]));
  return ag::add(l_mim, l_feat);
}

BranchInputs make_branch_inputs(const BranchBatch& batch, InputMode mode) {
  if (mode == InputMode::same_image) return {batch.images, batch.images};
  check(batch.partners.has_value(), Errc::tp_without_pairs, "temporal-pair mode needs paired samples");
  check(batch.partners->shape == batch.images.shape, Errc::shape_mismatch, "pair shapes differ");
  return {batch.images, *batch.partners};
}

template class ProjectionHead<float>;
template class ProjectionHead<double>;
template ag::Var<float> teacher_feature<float>(const Encoder<float>&, const Tensor<float>&, int);
template ag::Var<double> teacher_feature<double>(const Encoder<double>&, const Tensor<double>&, int);
template ag::Var<float> feat_loss<float>(const ag::Var<float>&, const ag::Var<float>&, const ProjectionHead<float>&,
                                         double, bool);
template ag::Var<double> feat_loss<double>(const ag::Var<double>&, const ag::Var<double>&,
                                           const ProjectionHead<double>&, double, bool);
template ag::Var<float> total_loss<float>(const ag::Var<float>&, const ag::Var<float>&);
template ag::Var<double> total_loss<double>(const ag::Var<double>&, const ag::Var<double>&);

}  // namespace gfm
