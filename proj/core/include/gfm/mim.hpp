#pragma once

#include <cstdint>
#include <vector>

#include "gfm/encoder.hpp"
#include "gfm/rng.hpp"

namespace gfm {

// Uniformly random subset of round(ratio * side^2) cells, drawn without
// replacement. Throws ratio-out-of-range unless 0 < ratio < 1.
MaskGrid sample_mask(std::size_t grid_side, double ratio, Rng& rng);
MaskGrid sample_mask_batch(std::size_t batch, std::size_t grid_side, double ratio, Rng& rng);

// Per-value mask [B, H, W, C] for an image batch, expanding each grid cell to
// mask_patch_size x mask_patch_size pixels and every channel.
std::vector<std::uint8_t> expand_mask(const MaskGrid& mask, std::size_t mask_patch_size, std::size_t channels);

struct MaskedBatch {
  Tensor<float> images;  // [B, H, W, C], values in [0, 1]
  MaskGrid mask;
  double mask_ratio = 0.6;
};

// Linear map from the final feature width to stride^2 * C values per token,
// followed by a pixel shuffle back to full image resolution.
template <typename T>
class ReconstructionHead {
 public:
  ReconstructionHead(int in_dim, int stride, int channels, std::uint64_t seed);

  // feature: [B, s, s, in_dim] -> [B, s*stride, s*stride, channels]
  ag::Var<T> forward(const ag::Var<T>& feature) const;

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  int stride() const { return stride_; }
  int channels() const { return channels_; }

 private:
  ag::SparseMapPtr shuffle_for(std::size_t side) const;

  int in_dim_, stride_, channels_;
  ParamSet<T> params_;
};

template <typename T>
ag::Var<T> reconstruct(const ReconstructionHead<T>& head, const ag::Var<T>& final_feature) {
  return head.forward(final_feature);
}

// Mean absolute error over masked pixel values (masked pixels x channels).
// Throws empty-mask when nothing is masked.
template <typename T>
ag::Var<T> mim_loss(const Tensor<T>& original, const ag::Var<T>& generated, const MaskGrid& mask,
                    std::size_t mask_patch_size);

// Pixel shuffle: [s, s, r*r*C] -> [s*r, s*r, C], channel index c*r*r + dy*r + dx.
ag::SparseMapPtr pixel_shuffle_map(std::size_t side, std::size_t factor, std::size_t channels);

}  // namespace gfm
