#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "gfm/tensor.hpp"

// Minimal reverse-mode automatic differentiation over dense tensors.
//
// A Var is a shared node holding a value and (lazily) a gradient buffer. Ops
// that receive at least one input with requires_grad record a backward
// closure; otherwise the result is a detached constant and no graph is kept.
// Instantiated for float (training) and double (gradient checking).
namespace gfm::ag {

template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.numel()) grad.assign(value.numel(), T{0});
    return grad;
  }
  const Shape& shape() const { return value.shape; }
  std::size_t numel() const { return value.numel(); }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_var(Tensor<T> value, bool requires_grad = false) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

// Runs the backward pass from a scalar root, accumulating into .grad of every
// reachable node that requires grad.
template <typename T>
void backward(const Var<T>& root);

// Fixed linear resampling: out[o] = sum_t weight[o*taps+t] * in[index[o*taps+t]].
// index -1 contributes zero (padding). An empty weight vector means all ones.
// Covers reshapes, permutations, window partitioning, cyclic shifts, patch
// extraction, pixel shuffle, im2col and bilinear/bicubic upsampling.
struct SparseMap {
  Shape out_shape;
  std::size_t in_numel = 0;
  std::size_t taps = 1;
  std::vector<std::int64_t> index;
  std::vector<double> weight;
};
using SparseMapPtr = std::shared_ptr<const SparseMap>;

// Composes two maps: first then second.
SparseMap compose(const SparseMap& first, const SparseMap& second);
// Inverse of a pure permutation map (taps == 1, no padding, no weights).
SparseMap invert_permutation(const SparseMap& map, Shape in_shape);

template <typename T>
Tensor<T> apply(const SparseMap& map, const Tensor<T>& in);

// x: [..., K] viewed as rows; w: [K, N]; b: [N] or null.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

// a: [B, M, K]; b: [B, K, N], or [B, N, K] when transpose_b.
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T factor);
template <typename T>
Var<T> abs(const Var<T>& a);

// x[i] += b[i % b.numel()]
template <typename T>
Var<T> add_cyclic(const Var<T>& x, const Var<T>& b);

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));
template <typename T>
Var<T> softmax(const Var<T>& x);
template <typename T>
Var<T> gelu(const Var<T>& x);
template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T>
Var<T> resample(const Var<T>& x, const SparseMapPtr& map);

// x: [R, C]; rows with row_mask[r] != 0 are replaced by token [C].
template <typename T>
Var<T> blend_rows(const Var<T>& x, const Var<T>& token, std::span<const std::uint8_t> row_mask);

// Scales contiguous group g of x by factors[g].
template <typename T>
Var<T> scale_groups(const Var<T>& x, std::vector<T> factors);

// x: [B, N, C] -> [B, C], mean over N.
template <typename T>
Var<T> mean_tokens(const Var<T>& x);

// Stacks along a new leading axis; all inputs share a shape.
template <typename T>
Var<T> concat_batch(const Var<T>& a, const Var<T>& b);

// Slices [begin, end) along the leading axis.
template <typename T>
Var<T> slice_batch(const Var<T>& x, std::size_t begin, std::size_t end);

// --- scalar losses ---

// Sum of |pred - target| over entries with mask != 0, divided by their count.
template <typename T>
Var<T> masked_l1(const Var<T>& pred, const Tensor<T>& target, std::span<const std::uint8_t> mask);

// Mean over rows of -<a_r / max(|a_r|, eps), b_r / max(|b_r|, eps)>; a, b: [R, C].
template <typename T>
Var<T> neg_cosine(const Var<T>& a, const Var<T>& b, T eps);

// Mean softmax cross-entropy; logits [R, K]; labels in [0, K).
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels);

// Mean binary cross-entropy with logits; targets in {0, 1}.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& targets, T pos_weight = T(1));

// Mean absolute error.
template <typename T>
Var<T> l1_mean(const Var<T>& pred, const Tensor<T>& target);

}  // namespace gfm::ag
