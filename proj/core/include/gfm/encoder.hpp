#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gfm/autograd.hpp"
#include "gfm/params.hpp"
#include "gfm/rng.hpp"

namespace gfm {

// Hierarchical windowed-attention encoder configuration.
//
// Resolution between stages: each merge doubles the channel width. It halves
// the token grid unless halving would leave fewer than two attention windows
// per side; an explicit `downsample` list (one flag per merge) overrides that
// rule.
struct EncoderConfig {
  int image_size = 192;
  int patch_size = 4;
  int in_channels = 3;
  std::vector<int> depths{2, 2, 18, 2};
  std::vector<int> dims{128, 256, 512, 1024};
  std::vector<int> heads{4, 8, 16, 32};
  int window_size = 6;
  int mask_patch_size = 32;
  double mlp_ratio = 4.0;
  double drop_path_rate = 0.0;
  std::vector<bool> downsample;  // empty: derived

  int num_stages() const { return static_cast<int>(depths.size()); }
  // Throws invalid-config describing the first violated constraint.
  void validate() const;
  // Token-grid side per stage.
  std::vector<int> stage_sides() const;
  // Whether the merge preceding stage `stage` (1-based, >= 2) halves the grid.
  bool merge_halves(int stage) const;
  int mask_grid_side() const { return image_size / mask_patch_size; }

  // image 32, patch 4, dims [16,32,64,128], depths [1,1,1,1], window 2, mask patch 8
  static EncoderConfig tiny();

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

// Patch mask at mask_patch_size granularity; cells[b * side * side + r * side + c], 1 = masked.
struct MaskGrid {
  std::size_t batch = 0;
  std::size_t side = 0;
  std::vector<std::uint8_t> cells;

  std::size_t masked_count(std::size_t b) const;
  bool at(std::size_t b, std::size_t r, std::size_t c) const { return cells[(b * side + r) * side + c] != 0; }
};

template <typename T>
struct FeaturePyramid {
  std::size_t batch = 0;
  std::vector<ag::Var<T>> stages;  // stage i: [B, side_i, side_i, dim_i]
  std::vector<int> sides;
  std::vector<int> dims;
  ag::Var<T> final_normed;  // layer-normed last stage; null for truncated encoders
};

struct ForwardOptions {
  bool training = false;  // enables stochastic depth when drop_path_rate > 0
  Rng* rng = nullptr;
};

template <typename T>
class Encoder {
 public:
  // Instantiates stages 1..max_stage (0 = all). Parameters are drawn from
  // Rng(seed) in declaration order.
  Encoder(const EncoderConfig& config, std::uint64_t seed, int max_stage = 0);

  const EncoderConfig& config() const { return config_; }
  int built_stages() const { return built_stages_; }
  bool frozen() const { return !params_.trainable(); }
  void freeze() { params_.set_trainable(false); }
  void unfreeze() { params_.set_trainable(true); }

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  std::uint64_t content_hash() const { return params_.hash(); }

  // images: [B, H, W, C]. With a mask, embedded tokens of masked regions are
  // replaced by the learnable mask token before stage 1.
  FeaturePyramid<T> forward(const ag::Var<T>& images, const MaskGrid* mask = nullptr,
                            const ForwardOptions& options = {}) const;

  // Post-embedding token sequence [B, side_1, side_1, dim_1] (after mask
  // substitution); exposed for locality checks.
  ag::Var<T> embed(const ag::Var<T>& images, const MaskGrid* mask) const;

  enum class ExtendInit { random, zeros };
  Encoder extend_input_channels(int new_channels, std::uint64_t seed, ExtendInit init = ExtendInit::random) const;

  // Builds an encoder of identical config and copies the parameters of
  // stages 1..max_stage from `source`.
  static Encoder truncated_copy(const Encoder& source, int max_stage);

 private:
  struct BlockParams {
    std::size_t norm1_w, norm1_b, qkv_w, qkv_b, rel_table, proj_w, proj_b, norm2_w, norm2_b, fc1_w, fc1_b, fc2_w,
        fc2_b;
    bool shifted;
  };
  struct WindowMaps {
    ag::SparseMapPtr to_windows, from_windows, split_q, split_k, split_v, merge_heads, bias_gather;
    ag::Var<T> shift_mask;  // [nW, heads, N, N] or null
  };
  struct StageParams {
    std::optional<std::size_t> merge_norm_w, merge_norm_b, merge_reduction;
    ag::SparseMapPtr merge_map;  // 2x2 neighbourhood gather when halving
    std::vector<BlockParams> blocks;
    WindowMaps plain, shifted;
    int side = 0, dim = 0, heads = 0;
  };

  void build_maps();
  ag::Var<T> run_block(const ag::Var<T>& x, const StageParams& stage, const BlockParams& block, double drop_prob,
                       const ForwardOptions& options) const;

  EncoderConfig config_;
  int built_stages_;
  ParamSet<T> params_;
  std::size_t patch_w_, patch_b_, patch_norm_w_, patch_norm_b_, mask_token_;
  std::optional<std::size_t> final_norm_w_, final_norm_b_;
  std::vector<StageParams> stages_;
  ag::SparseMapPtr patchify_;
};

// Functional surface mirroring the module operations.
template <typename T>
Encoder<T> build_encoder(const EncoderConfig& config, std::uint64_t seed) {
  return Encoder<T>(config, seed);
}

template <typename T>
FeaturePyramid<T> encoder_forward(const Encoder<T>& encoder, const ag::Var<T>& images,
                                  const MaskGrid* mask = nullptr) {
  return encoder.forward(images, mask);
}

template <typename T>
Encoder<T> freeze(Encoder<T> encoder) {
  encoder.freeze();
  return encoder;
}

template <typename T>
Encoder<T> extend_input_channels(const Encoder<T>& encoder, int new_channels, std::uint64_t seed) {
  return encoder.extend_input_channels(new_channels, seed);
}

// Image batch [B, H, W, C] as a leaf variable.
template <typename T>
ag::Var<T> image_input(Tensor<T> images, bool requires_grad = false) {
  return ag::make_var(std::move(images), requires_grad);
}

}  // namespace gfm
