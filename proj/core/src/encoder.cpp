#include "gfm/encoder.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "gfm/error.hpp"

namespace gfm {

void EncoderConfig::validate() const {
  const auto n = depths.size();
  check(n >= 1, Errc::invalid_config, "at least one stage required");
  check(dims.size() == n && heads.size() == n, Errc::invalid_config,
        "depths/dims/heads lengths differ (" + std::to_string(depths.size()) + "/" + std::to_string(dims.size()) +
            "/" + std::to_string(heads.size()) + ")");
  check(downsample.empty() || downsample.size() + 1 == n, Errc::invalid_config,
        "downsample needs one flag per merge");
  check(patch_size >= 1 && image_size >= patch_size && in_channels >= 1 && window_size >= 1, Errc::invalid_config,
        "sizes must be positive");
  check(image_size % patch_size == 0, Errc::invalid_config, "image_size not divisible by patch_size");
  check(mask_patch_size >= patch_size && mask_patch_size % patch_size == 0, Errc::invalid_config,
        "mask_patch_size must be a multiple of patch_size");
  check(image_size % mask_patch_size == 0, Errc::invalid_config, "image_size not divisible by mask_patch_size");
  check(mlp_ratio > 0 && drop_path_rate >= 0 && drop_path_rate < 1, Errc::invalid_config, "mlp_ratio/drop_path_rate");
  for (std::size_t i = 0; i < n; ++i) {
    check(depths[i] >= 1 && dims[i] >= 1 && heads[i] >= 1, Errc::invalid_config, "stage sizes must be positive");
    check(dims[i] % heads[i] == 0, Errc::invalid_config, "stage " + std::to_string(i + 1) + " dim not divisible by heads");
    if (i + 1 < n)
      check(dims[i + 1] == 2 * dims[i], Errc::invalid_config,
            "channel width must double between stages (stage " + std::to_string(i + 1) + ": " +
                std::to_string(dims[i]) + " -> " + std::to_string(dims[i + 1]) + ")");
  }
  int side = image_size / patch_size;
  for (int s = 1; s <= static_cast<int>(n); ++s) {
    if (s > 1 && merge_halves(s)) {
      check(side % 2 == 0, Errc::invalid_config, "odd token grid cannot be merged at stage " + std::to_string(s));
      side /= 2;
    }
    check(side % window_size == 0, Errc::invalid_config,
          "token grid side " + std::to_string(side) + " at stage " + std::to_string(s) +
              " not divisible by window_size " + std::to_string(window_size));
  }
}

bool EncoderConfig::merge_halves(int stage) const {
  if (!downsample.empty()) return downsample.at(static_cast<std::size_t>(stage - 2));
  int side = image_size / patch_size;
  for (int s = 2; s <= stage; ++s) {
    const bool halve = side % 2 == 0 && side / 2 >= 2 * window_size;
    if (s == stage) return halve;
    if (halve) side /= 2;
  }
  return false;
}

std::vector<int> EncoderConfig::stage_sides() const {
  std::vector<int> sides;
  int side = image_size / patch_size;
  for (int s = 1; s <= num_stages(); ++s) {
    if (s > 1 && merge_halves(s)) side /= 2;
    sides.push_back(side);
  }
  return sides;
}

EncoderConfig EncoderConfig::tiny() {
  EncoderConfig c;
  c.image_size = 32;
  c.patch_size = 4;
  c.in_channels = 3;
  c.depths = {1, 1, 1, 1};
  c.dims = {16, 32, 64, 128};
  c.heads = {1, 2, 4, 8};
  c.window_size = 2;
  c.mask_patch_size = 8;
  return c;
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},   {"patch_size", c.patch_size},
                     {"in_channels", c.in_channels}, {"depths", c.depths},
                     {"dims", c.dims},               {"heads", c.heads},
                     {"window_size", c.window_size}, {"mask_patch_size", c.mask_patch_size},
                     {"mlp_ratio", c.mlp_ratio},     {"drop_path_rate", c.drop_path_rate}};
  if (!c.downsample.empty()) j["downsample"] = c.downsample;
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  EncoderConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.in_channels = j.value("in_channels", d.in_channels);
  c.depths = j.value("depths", d.depths);
  c.dims = j.value("dims", d.dims);
  c.heads = j.value("heads", d.heads);
  c.window_size = j.value("window_size", d.window_size);
  c.mask_patch_size = j.value("mask_patch_size", d.mask_patch_size);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.drop_path_rate = j.value("drop_path_rate", d.drop_path_rate);
  c.downsample = j.value("downsample", std::vector<bool>{});
}

std::size_t MaskGrid::masked_count(std::size_t b) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < side * side; ++i) n += cells[b * side * side + i] ? 1 : 0;
  return n;
}

namespace {

using ag::SparseMap;
using ag::SparseMapPtr;

template <typename T>
Tensor<T> trunc_normal_tensor(Shape shape, Rng& rng, double std = 0.02) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.trunc_normal(std));
  return t;
}

SparseMapPtr patchify_map(int image, int patch, int channels) {
  const int side = image / patch;
  const std::size_t width = static_cast<std::size_t>(patch * patch * channels);
  auto m = std::make_shared<SparseMap>();
  m->out_shape = {static_cast<std::size_t>(side), static_cast<std::size_t>(side), width};
  m->in_numel = static_cast<std::size_t>(image) * image * channels;
  m->index.reserve(shape_numel(m->out_shape));
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j)
      for (int dy = 0; dy < patch; ++dy)
        for (int dx = 0; dx < patch; ++dx)
          for (int c = 0; c < channels; ++c)
            m->index.push_back((static_cast<std::int64_t>(i * patch + dy) * image + (j * patch + dx)) * channels + c);
  return m;
}

SparseMapPtr merge_map(int side, int dim) {
  const int half = side / 2;
  auto m = std::make_shared<SparseMap>();
  m->out_shape = {static_cast<std::size_t>(half), static_cast<std::size_t>(half), static_cast<std::size_t>(4 * dim)};
  m->in_numel = static_cast<std::size_t>(side) * side * dim;
  // quadrant order (row offset, col offset): (0,0) (1,0) (0,1) (1,1)
  const int dr[4] = {0, 1, 0, 1};
  const int dc[4] = {0, 0, 1, 1};
  for (int i = 0; i < half; ++i)
    for (int j = 0; j < half; ++j)
      for (int q = 0; q < 4; ++q)
        for (int c = 0; c < dim; ++c)
          m->index.push_back((static_cast<std::int64_t>(2 * i + dr[q]) * side + (2 * j + dc[q])) * dim + c);
  return m;
}

}  // namespace

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& config, std::uint64_t seed, int max_stage) : config_(config) {
  config_.validate();
  const int S = config_.num_stages();
  built_stages_ = max_stage <= 0 ? S : std::min(max_stage, S);
  check(max_stage <= S, Errc::invalid_config, "max_stage beyond stage count");
  Rng rng(seed);
  const auto sides = config_.stage_sides();
  const std::size_t p = static_cast<std::size_t>(config_.patch_size);
  const std::size_t d0 = static_cast<std::size_t>(config_.dims[0]);
  const std::size_t in_width = p * p * static_cast<std::size_t>(config_.in_channels);

  patch_w_ = params_.add("patch_embed.proj.weight", trunc_normal_tensor<T>({in_width, d0}, rng), true);
  patch_b_ = params_.add("patch_embed.proj.bias", Tensor<T>({d0}), false);
  patch_norm_w_ = params_.add("patch_embed.norm.weight", Tensor<T>({d0}, T(1)), false);
  patch_norm_b_ = params_.add("patch_embed.norm.bias", Tensor<T>({d0}), false);
  mask_token_ = params_.add("mask_token", trunc_normal_tensor<T>({d0}, rng), false);

  for (int s = 0; s < built_stages_; ++s) {
    StageParams stage;
    stage.side = sides[static_cast<std::size_t>(s)];
    stage.dim = config_.dims[static_cast<std::size_t>(s)];
    stage.heads = config_.heads[static_cast<std::size_t>(s)];
    const std::string prefix = "stages." + std::to_string(s) + ".";
    const std::size_t C = static_cast<std::size_t>(stage.dim);
    if (s > 0) {
      const std::size_t prev = C / 2;
      const bool halves = config_.merge_halves(s + 1);
      const std::size_t merged = halves ? 4 * prev : prev;
      stage.merge_norm_w = params_.add(prefix + "merge.norm.weight", Tensor<T>({merged}, T(1)), false);
      stage.merge_norm_b = params_.add(prefix + "merge.norm.bias", Tensor<T>({merged}), false);
      stage.merge_reduction = params_.add(prefix + "merge.reduction.weight", trunc_normal_tensor<T>({merged, C}, rng), true);
      if (halves) stage.merge_map = merge_map(sides[static_cast<std::size_t>(s - 1)], static_cast<int>(prev));
    }
    const std::size_t ws = static_cast<std::size_t>(config_.window_size);
    const std::size_t table = (2 * ws - 1) * (2 * ws - 1);
    const std::size_t hidden = static_cast<std::size_t>(std::lround(config_.mlp_ratio * static_cast<double>(C)));
    const bool can_shift = stage.side > config_.window_size && config_.window_size > 1;
    for (int b = 0; b < config_.depths[static_cast<std::size_t>(s)]; ++b) {
      const std::string bp = prefix + "blocks." + std::to_string(b) + ".";
      BlockParams block{};
      block.norm1_w = params_.add(bp + "norm1.weight", Tensor<T>({C}, T(1)), false);
      block.norm1_b = params_.add(bp + "norm1.bias", Tensor<T>({C}), false);
      block.qkv_w = params_.add(bp + "attn.qkv.weight", trunc_normal_tensor<T>({C, 3 * C}, rng), true);
      block.qkv_b = params_.add(bp + "attn.qkv.bias", Tensor<T>({3 * C}), false);
      block.rel_table = params_.add(bp + "attn.relative_position_bias_table",
                                    Tensor<T>({table, static_cast<std::size_t>(stage.heads)}), false);
      block.proj_w = params_.add(bp + "attn.proj.weight", trunc_normal_tensor<T>({C, C}, rng), true);
      block.proj_b = params_.add(bp + "attn.proj.bias", Tensor<T>({C}), false);
      block.norm2_w = params_.add(bp + "norm2.weight", Tensor<T>({C}, T(1)), false);
      block.norm2_b = params_.add(bp + "norm2.bias", Tensor<T>({C}), false);
      block.fc1_w = params_.add(bp + "mlp.fc1.weight", trunc_normal_tensor<T>({C, hidden}, rng), true);
      block.fc1_b = params_.add(bp + "mlp.fc1.bias", Tensor<T>({hidden}), false);
      block.fc2_w = params_.add(bp + "mlp.fc2.weight", trunc_normal_tensor<T>({hidden, C}, rng), true);
      block.fc2_b = params_.add(bp + "mlp.fc2.bias", Tensor<T>({C}), false);
      block.shifted = can_shift && (b % 2 == 1);
      stage.blocks.push_back(block);
    }
    stages_.push_back(std::move(stage));
  }
  if (built_stages_ == S) {
    const std::size_t last = static_cast<std::size_t>(config_.dims.back());
    final_norm_w_ = params_.add("norm.weight", Tensor<T>({last}, T(1)), false);
    final_norm_b_ = params_.add("norm.bias", Tensor<T>({last}), false);
  }
  build_maps();
}

template <typename T>
void Encoder<T>::build_maps() {
  patchify_ = patchify_map(config_.image_size, config_.patch_size, config_.in_channels);
  const std::size_t ws = static_cast<std::size_t>(config_.window_size);
  const std::size_t N = ws * ws;
  for (auto& stage : stages_) {
    const std::size_t S = static_cast<std::size_t>(stage.side);
    const std::size_t C = static_cast<std::size_t>(stage.dim);
    const std::size_t H = static_cast<std::size_t>(stage.heads);
    const std::size_t hd = C / H;
    const std::size_t nw_side = S / ws;
    const std::size_t nW = nw_side * nw_side;

    auto make = [&](std::size_t shift) {
      WindowMaps maps;
      SparseMap to;
      to.out_shape = {nW, N, C};
      to.in_numel = S * S * C;
      to.index.reserve(to.in_numel);
      for (std::size_t wr = 0; wr < nw_side; ++wr)
        for (std::size_t wc = 0; wc < nw_side; ++wc)
          for (std::size_t r = 0; r < ws; ++r)
            for (std::size_t c = 0; c < ws; ++c) {
              const std::size_t y = (wr * ws + r + shift) % S;
              const std::size_t x = (wc * ws + c + shift) % S;
              for (std::size_t ch = 0; ch < C; ++ch) to.index.push_back(static_cast<std::int64_t>((y * S + x) * C + ch));
            }
      maps.from_windows = std::make_shared<SparseMap>(ag::invert_permutation(to, {S, S, C}));
      maps.to_windows = std::make_shared<SparseMap>(std::move(to));

      auto split = [&](std::size_t part) {
        auto m = std::make_shared<SparseMap>();
        m->out_shape = {nW, H, N, hd};
        m->in_numel = nW * N * 3 * C;
        for (std::size_t w = 0; w < nW; ++w)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t n = 0; n < N; ++n)
              for (std::size_t d = 0; d < hd; ++d)
                m->index.push_back(static_cast<std::int64_t>((w * N + n) * 3 * C + part * C + h * hd + d));
        return m;
      };
      maps.split_q = split(0);
      maps.split_k = split(1);
      maps.split_v = split(2);

      auto merge = std::make_shared<SparseMap>();
      merge->out_shape = {nW, N, C};
      merge->in_numel = nW * H * N * hd;
      for (std::size_t w = 0; w < nW; ++w)
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t d = 0; d < hd; ++d)
              merge->index.push_back(static_cast<std::int64_t>(((w * H + h) * N + n) * hd + d));
      maps.merge_heads = merge;

      auto bias = std::make_shared<SparseMap>();
      bias->out_shape = {H, N, N};
      bias->in_numel = (2 * ws - 1) * (2 * ws - 1) * H;
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < N; ++i)
          for (std::size_t j = 0; j < N; ++j) {
            const std::int64_t dy = static_cast<std::int64_t>(i / ws) - static_cast<std::int64_t>(j / ws) +
                                    static_cast<std::int64_t>(ws) - 1;
            const std::int64_t dx = static_cast<std::int64_t>(i % ws) - static_cast<std::int64_t>(j % ws) +
                                    static_cast<std::int64_t>(ws) - 1;
            const std::int64_t rel = dy * static_cast<std::int64_t>(2 * ws - 1) + dx;
            bias->index.push_back(rel * static_cast<std::int64_t>(H) + static_cast<std::int64_t>(h));
          }
      maps.bias_gather = bias;

      if (shift > 0) {
        // Region labels in the shifted frame; tokens from different regions must
        // not attend to each other after the cyclic roll.
        auto region = [&](std::size_t v) -> int { return v < S - ws ? 0 : (v < S - shift ? 1 : 2); };
        Tensor<T> mask({nW, H, N, N});
        for (std::size_t wr = 0; wr < nw_side; ++wr)
          for (std::size_t wc = 0; wc < nw_side; ++wc) {
            const std::size_t w = wr * nw_side + wc;
            for (std::size_t i = 0; i < N; ++i)
              for (std::size_t j = 0; j < N; ++j) {
                const int li = region(wr * ws + i / ws) * 3 + region(wc * ws + i % ws);
                const int lj = region(wr * ws + j / ws) * 3 + region(wc * ws + j % ws);
                const T v = li == lj ? T{0} : T(-100);
                for (std::size_t h = 0; h < H; ++h) mask.data[((w * H + h) * N + i) * N + j] = v;
              }
          }
        maps.shift_mask = ag::make_var(std::move(mask));
      }
      return maps;
    };
    stage.plain = make(0);
    bool any_shift = false;
    for (const auto& b : stage.blocks) any_shift |= b.shifted;
    if (any_shift) stage.shifted = make(ws / 2);
  }
}

template <typename T>
ag::Var<T> Encoder<T>::embed(const ag::Var<T>& images, const MaskGrid* mask) const {
  const auto& shape = images->shape();
  const std::size_t img = static_cast<std::size_t>(config_.image_size);
  check(shape.size() == 4 && shape[1] == img && shape[2] == img &&
            shape[3] == static_cast<std::size_t>(config_.in_channels),
        Errc::shape_mismatch,
        "images " + shape_str(shape) + " do not match encoder input [B," + std::to_string(img) + "," +
            std::to_string(img) + "," + std::to_string(config_.in_channels) + "]");
  const std::size_t B = shape[0];
  auto patches = ag::resample(images, patchify_);
  auto x = ag::linear(patches, params_[patch_w_], params_[patch_b_]);
  x = ag::layer_norm(x, params_[patch_norm_w_], params_[patch_norm_b_]);
  if (!mask) return x;
  const std::size_t side = static_cast<std::size_t>(config_.mask_grid_side());
  check(mask->batch == B && mask->side == side && mask->cells.size() == B * side * side, Errc::shape_mismatch,
        "mask grid " + std::to_string(mask->batch) + "x" + std::to_string(mask->side) + " vs batch " +
            std::to_string(B) + " side " + std::to_string(side));
  const std::size_t tokens = img / static_cast<std::size_t>(config_.patch_size);
  const std::size_t per_cell = static_cast<std::size_t>(config_.mask_patch_size / config_.patch_size);
  std::vector<std::uint8_t> rows(B * tokens * tokens);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < tokens; ++i)
      for (std::size_t j = 0; j < tokens; ++j)
        rows[(b * tokens + i) * tokens + j] = mask->at(b, i / per_cell, j / per_cell) ? 1 : 0;
  return ag::blend_rows(x, params_[mask_token_], rows);
}

template <typename T>
ag::Var<T> Encoder<T>::run_block(const ag::Var<T>& x, const StageParams& stage, const BlockParams& block,
                                 double drop_prob, const ForwardOptions& options) const {
  const WindowMaps& maps = block.shifted ? stage.shifted : stage.plain;
  const std::size_t B = x->value.dim(0);
  const T scale_qk = T(1) / std::sqrt(static_cast<T>(stage.dim / stage.heads));

  auto drop = [&](const ag::Var<T>& branch) {
    if (!options.training || drop_prob <= 0.0) return branch;
    check(options.rng != nullptr, Errc::invalid_config, "stochastic depth needs an rng");
    std::vector<T> factors(B);
    for (auto& f : factors) f = options.rng->bernoulli(drop_prob) ? T{0} : static_cast<T>(1.0 / (1.0 - drop_prob));
    return ag::scale_groups(branch, std::move(factors));
  };

  auto h = ag::layer_norm(x, params_[block.norm1_w], params_[block.norm1_b]);
  h = ag::resample(h, maps.to_windows);
  auto qkv = ag::linear(h, params_[block.qkv_w], params_[block.qkv_b]);
  auto q = ag::scale(ag::resample(qkv, maps.split_q), scale_qk);
  auto k = ag::resample(qkv, maps.split_k);
  auto v = ag::resample(qkv, maps.split_v);
  auto attn = ag::bmm(q, k, true);
  attn = ag::add_cyclic(attn, ag::resample(params_[block.rel_table], maps.bias_gather));
  if (maps.shift_mask) attn = ag::add_cyclic(attn, maps.shift_mask);
  attn = ag::softmax(attn);
  auto out = ag::bmm(attn, v, false);
  out = ag::resample(out, maps.merge_heads);
  out = ag::linear(out, params_[block.proj_w], params_[block.proj_b]);
  out = ag::resample(out, maps.from_windows);
  auto y = ag::add(x, drop(out));

  auto m = ag::layer_norm(y, params_[block.norm2_w], params_[block.norm2_b]);
  m = ag::gelu(ag::linear(m, params_[block.fc1_w], params_[block.fc1_b]));
  m = ag::linear(m, params_[block.fc2_w], params_[block.fc2_b]);
  return ag::add(y, drop(m));
}

template <typename T>
FeaturePyramid<T> Encoder<T>::forward(const ag::Var<T>& images, const MaskGrid* mask,
                                      const ForwardOptions& options) const {
  FeaturePyramid<T> out;
  auto x = embed(images, mask);
  out.batch = x->value.dim(0);
  int total_blocks = 0;
  for (int d : config_.depths) total_blocks += d;
  int block_index = 0;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const auto& stage = stages_[s];
    if (s > 0) {
      if (stage.merge_map) x = ag::resample(x, stage.merge_map);
      x = ag::layer_norm(x, params_[*stage.merge_norm_w], params_[*stage.merge_norm_b]);
      x = ag::linear(x, params_[*stage.merge_reduction], ag::Var<T>{});
    }
    for (const auto& block : stage.blocks) {
      const double drop_prob =
          total_blocks > 1 ? config_.drop_path_rate * block_index / (total_blocks - 1) : config_.drop_path_rate;
      x = run_block(x, stage, block, drop_prob, options);
      ++block_index;
    }
    out.stages.push_back(x);
    out.sides.push_back(stage.side);
    out.dims.push_back(stage.dim);
  }
  if (final_norm_w_) out.final_normed = ag::layer_norm(x, params_[*final_norm_w_], params_[*final_norm_b_]);
  return out;
}

template <typename T>
Encoder<T> Encoder<T>::extend_input_channels(int new_channels, std::uint64_t seed, ExtendInit init) const {
  const int old_channels = config_.in_channels;
  check(new_channels > old_channels, Errc::shrink_not_supported,
        "cannot go from " + std::to_string(old_channels) + " to " + std::to_string(new_channels) + " input channels");
  EncoderConfig cfg = config_;
  cfg.in_channels = new_channels;
  Encoder<T> out(cfg, seed, built_stages_);
  Rng rng(seed);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& src = params_.items()[i];
    auto& dst = out.params_.items()[i];
    if (i != patch_w_) {
      dst.var->value = src.var->value;
      continue;
    }
    const std::size_t positions = static_cast<std::size_t>(config_.patch_size * config_.patch_size);
    const std::size_t D = src.var->value.dim(1);
    Tensor<T> w({positions * static_cast<std::size_t>(new_channels), D});
    for (std::size_t pos = 0; pos < positions; ++pos)
      for (std::size_t c = 0; c < static_cast<std::size_t>(new_channels); ++c) {
        T* row = w.data.data() + (pos * static_cast<std::size_t>(new_channels) + c) * D;
        if (c < static_cast<std::size_t>(old_channels)) {
          const T* from = src.var->value.data.data() + (pos * static_cast<std::size_t>(old_channels) + c) * D;
          std::copy(from, from + D, row);
        } else if (init == ExtendInit::random) {
          for (std::size_t d = 0; d < D; ++d) row[d] = static_cast<T>(rng.trunc_normal(0.02));
        }
      }
    dst.var->value = std::move(w);
  }
  out.params_.set_trainable(params_.trainable());
  return out;
}

template <typename T>
Encoder<T> Encoder<T>::truncated_copy(const Encoder& source, int max_stage) {
  Encoder<T> out(source.config_, 0, max_stage);
  for (auto& p : out.params_.items()) {
    const auto idx = source.params_.find(p.name);
    check(idx >= 0, Errc::invalid_config, "source encoder lacks " + p.name);
    p.var->value = source.params_[static_cast<std::size_t>(idx)]->value;
  }
  out.params_.set_trainable(source.params_.trainable());
  return out;
}

template <typename T>
void import_float(ParamSet<T>& params, const std::map<std::string, Tensor<float>>& tensors, const std::string& prefix,
                  bool require_all) {
  for (auto& p : params.items()) {
    auto it = tensors.find(prefix + p.name);
    if (it == tensors.end()) {
      check(!require_all, Errc::corrupt_container, "missing tensor " + prefix + p.name);
      continue;
    }
    check(it->second.shape == p.var->value.shape, Errc::corrupt_container,
          "tensor " + it->first + " has shape " + shape_str(it->second.shape) + ", expected " +
              shape_str(p.var->value.shape));
    p.var->value = it->second.template cast<T>();
  }
}

template class Encoder<float>;
template class Encoder<double>;
template void import_float<float>(ParamSet<float>&, const std::map<std::string, Tensor<float>>&, const std::string&,
                                  bool);
template void import_float<double>(ParamSet<double>&, const std::map<std::string, Tensor<float>>&, const std::string&,
                                   bool);

}  // namespace gfm
