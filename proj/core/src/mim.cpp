#include "gfm/mim.hpp"

#include <cmath>
#include <numeric>

#include "gfm/error.hpp"

namespace gfm {

MaskGrid sample_mask(std::size_t grid_side, double ratio, Rng& rng) {
  return sample_mask_batch(1, grid_side, ratio, rng);
}

MaskGrid sample_mask_batch(std::size_t batch, std::size_t grid_side, double ratio, Rng& rng) {
  check(ratio > 0.0 && ratio < 1.0, Errc::ratio_out_of_range, "mask ratio " + std::to_string(ratio));
  check(grid_side > 0, Errc::invalid_config, "mask grid side must be positive");
  const std::size_t cells = grid_side * grid_side;
  const auto count = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(cells)));
  MaskGrid mask{batch, grid_side, std::vector<std::uint8_t>(batch * cells, 0)};
  std::vector<std::size_t> order(cells);
  for (std::size_t b = 0; b < batch; ++b) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    // partial Fisher-Yates: the first `count` entries are a uniform subset
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(cells - i));
      std::swap(order[i], order[j]);
      mask.cells[b * cells + order[i]] = 1;
    }
  }
  return mask;
}

std::vector<std::uint8_t> expand_mask(const MaskGrid& mask, std::size_t mask_patch_size, std::size_t channels) {
  const std::size_t side = mask.side * mask_patch_size;
  std::vector<std::uint8_t> out(mask.batch * side * side * channels);
  for (std::size_t b = 0; b < mask.batch; ++b)
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const std::uint8_t m = mask.at(b, y / mask_patch_size, x / mask_patch_size) ? 1 : 0;
        std::uint8_t* px = out.data() + ((b * side + y) * side + x) * channels;
        std::fill(px, px + channels, m);
      }
  return out;
}

ag::SparseMapPtr pixel_shuffle_map(std::size_t side, std::size_t factor, std::size_t channels) {
  auto m = std::make_shared<ag::SparseMap>();
  const std::size_t out_side = side * factor;
  const std::size_t width = factor * factor * channels;
  m->out_shape = {out_side, out_side, channels};
  m->in_numel = side * side * width;
  m->index.reserve(out_side * out_side * channels);
  for (std::size_t y = 0; y < out_side; ++y)
    for (std::size_t x = 0; x < out_side; ++x)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t token = (y / factor) * side + (x / factor);
        const std::size_t k = c * factor * factor + (y % factor) * factor + (x % factor);
        m->index.push_back(static_cast<std::int64_t>(token * width + k));
      }
  return m;
}

template <typename T>
ReconstructionHead<T>::ReconstructionHead(int in_dim, int stride, int channels, std::uint64_t seed)
    : in_dim_(in_dim), stride_(stride), channels_(channels) {
  check(in_dim > 0 && stride > 0 && channels > 0, Errc::invalid_config, "reconstruction head sizes");
  Rng rng(seed);
  const std::size_t out = static_cast<std::size_t>(stride * stride * channels);
  Tensor<T> w({static_cast<std::size_t>(in_dim), out});
  for (auto& v : w.data) v = static_cast<T>(rng.trunc_normal(0.02));
  params_.add("decoder.weight", std::move(w), true);
  params_.add("decoder.bias", Tensor<T>({out}), false);
}

template <typename T>
ag::SparseMapPtr ReconstructionHead<T>::shuffle_for(std::size_t side) const {
  return pixel_shuffle_map(side, static_cast<std::size_t>(stride_), static_cast<std::size_t>(channels_));
}

template <typename T>
ag::Var<T> ReconstructionHead<T>::forward(const ag::Var<T>& feature) const {
  const auto& s = feature->shape();
  check(s.size() == 4 && s[1] == s[2] && s[3] == static_cast<std::size_t>(in_dim_), Errc::shape_mismatch,
        "reconstruction head expects [B, s, s, " + std::to_string(in_dim_) + "], got " + shape_str(s));
  auto y = ag::linear(feature, params_[0], params_[1]);
  return ag::resample(y, shuffle_for(s[1]));
}

template <typename T>
ag::Var<T> mim_loss(const Tensor<T>& original, const ag::Var<T>& generated, const MaskGrid& mask,
                    std::size_t mask_patch_size) {
  check(original.shape == generated->shape(), Errc::shape_mismatch,
        "original " + shape_str(original.shape) + " vs generated " + shape_str(generated->shape()));
  check(original.rank() == 4 && original.dim(0) == mask.batch && original.dim(1) == mask.side * mask_patch_size &&
            original.dim(2) == mask.side * mask_patch_size,
        Errc::shape_mismatch, "mask grid does not tile the image batch");
  const auto values = expand_mask(mask, mask_patch_size, original.dim(3));
  return ag::masked_l1(generated, original, values);
}

template class ReconstructionHead<float>;
template class ReconstructionHead<double>;
template ag::Var<float> mim_loss<float>(const Tensor<float>&, const ag::Var<float>&, const MaskGrid&, std::size_t);
template ag::Var<double> mim_loss<double>(const Tensor<double>&, const ag::Var<double>&, const MaskGrid&,
                                          std::size_t);

}  // namespace gfm
