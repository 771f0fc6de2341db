#include "gfm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "gfm/error.hpp"

namespace gfm {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::uint64_t hash_bytes(const void* data, std::size_t bytes, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace gfm

namespace gfm::ag {
namespace {

// Creates the output node; attaches parents + closure only when needed.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn) {
  auto out = std::make_shared<Node<T>>();
  out->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents)
    if (p && p->requires_grad) needs = true;
  if (needs) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(fn);
  }
  return out;
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  check(a->shape() == b->shape(), Errc::shape_mismatch,
        std::string(op) + ": " + shape_str(a->shape()) + " vs " + shape_str(b->shape()));
}

}  // namespace

template <typename T>
void backward(const Var<T>& root) {
  check(root->numel() == 1, Errc::shape_mismatch, "backward root must be a scalar");
  if (!root->requires_grad) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* child = node->parents[next++].get();
      if (child && child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

SparseMap compose(const SparseMap& first, const SparseMap& second) {
  check(second.in_numel == shape_numel(first.out_shape), Errc::shape_mismatch, "compose: size mismatch");
  SparseMap out;
  out.out_shape = second.out_shape;
  out.in_numel = first.in_numel;
  out.taps = first.taps * second.taps;
  const std::size_t n = shape_numel(second.out_shape);
  out.index.assign(n * out.taps, -1);
  const bool weighted = !first.weight.empty() || !second.weight.empty();
  if (weighted) out.weight.assign(n * out.taps, 0.0);
  for (std::size_t o = 0; o < n; ++o) {
    for (std::size_t t2 = 0; t2 < second.taps; ++t2) {
      const std::int64_t mid = second.index[o * second.taps + t2];
      const double w2 = second.weight.empty() ? 1.0 : second.weight[o * second.taps + t2];
      for (std::size_t t1 = 0; t1 < first.taps; ++t1) {
        const std::size_t slot = o * out.taps + t2 * first.taps + t1;
        if (mid < 0) continue;
        const std::size_t m = static_cast<std::size_t>(mid);
        out.index[slot] = first.index[m * first.taps + t1];
        if (weighted) out.weight[slot] = w2 * (first.weight.empty() ? 1.0 : first.weight[m * first.taps + t1]);
      }
    }
  }
  return out;
}

SparseMap invert_permutation(const SparseMap& map, Shape in_shape) {
  check(map.taps == 1 && map.weight.empty() && shape_numel(map.out_shape) == map.in_numel, Errc::invalid_config,
        "invert_permutation: not a permutation");
  SparseMap inv;
  inv.out_shape = std::move(in_shape);
  inv.in_numel = map.in_numel;
  inv.index.assign(map.in_numel, -1);
  for (std::size_t o = 0; o < map.index.size(); ++o) {
    check(map.index[o] >= 0, Errc::invalid_config, "invert_permutation: padding entry");
    inv.index[static_cast<std::size_t>(map.index[o])] = static_cast<std::int64_t>(o);
  }
  return inv;
}

template <typename T>
Tensor<T> apply(const SparseMap& map, const Tensor<T>& in) {
  const std::size_t per_in = map.in_numel;
  check(per_in > 0 && in.numel() % per_in == 0 && in.numel() > 0, Errc::shape_mismatch,
        "resample: input " + shape_str(in.shape) + " vs map input size " + std::to_string(per_in));
  const std::size_t batch = in.numel() / per_in;
  Shape shape{batch};
  shape.insert(shape.end(), map.out_shape.begin(), map.out_shape.end());
  Tensor<T> out(shape);
  const std::size_t per_out = shape_numel(map.out_shape);
  const std::size_t taps = map.taps;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = in.data.data() + b * per_in;
    T* dst = out.data.data() + b * per_out;
    if (taps == 1 && map.weight.empty()) {
      for (std::size_t o = 0; o < per_out; ++o) {
        const std::int64_t i = map.index[o];
        dst[o] = i < 0 ? T{0} : src[static_cast<std::size_t>(i)];
      }
      continue;
    }
    for (std::size_t o = 0; o < per_out; ++o) {
      T acc{0};
      for (std::size_t t = 0; t < taps; ++t) {
        const std::int64_t i = map.index[o * taps + t];
        if (i < 0) continue;
        const T w = map.weight.empty() ? T{1} : static_cast<T>(map.weight[o * taps + t]);
        acc += w * src[static_cast<std::size_t>(i)];
      }
      dst[o] = acc;
    }
  }
  return out;
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  check(w->value.rank() == 2, Errc::shape_mismatch, "linear: weight must be 2-D");
  const std::size_t K = w->value.dim(0), N = w->value.dim(1);
  check(!x->value.shape.empty() && x->value.shape.back() == K, Errc::shape_mismatch,
        "linear: input " + shape_str(x->shape()) + " vs weight " + shape_str(w->shape()));
  if (b) check(b->numel() == N, Errc::shape_mismatch, "linear: bias size");
  const std::size_t M = x->numel() / K;
  Shape out_shape = x->shape();
  out_shape.back() = N;
  Tensor<T> out(out_shape);
  const T* X = x->value.data.data();
  const T* W = w->value.data.data();
  T* Y = out.data.data();
  for (std::size_t m = 0; m < M; ++m) {
    T* y = Y + m * N;
    if (b) std::copy(b->value.data.begin(), b->value.data.end(), y);
    const T* xr = X + m * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T xv = xr[k];
      if (xv == T{0}) continue;
      const T* wr = W + k * N;
      for (std::size_t n = 0; n < N; ++n) y[n] += xv * wr[n];
    }
  }
  return make_result<T>(std::move(out), {x, w, b}, [M, K, N](Node<T>& self) {
    const auto& xs = self.parents[0];
    const auto& ws = self.parents[1];
    const auto& bs = self.parents[2];
    const T* G = self.grad.data();
    if (xs->requires_grad) {
      auto& gx = xs->grad_buffer();
      const T* W = ws->value.data.data();
      for (std::size_t m = 0; m < M; ++m) {
        const T* g = G + m * N;
        T* gxr = gx.data() + m * K;
        for (std::size_t k = 0; k < K; ++k) {
          const T* wr = W + k * N;
          T acc{0};
          for (std::size_t n = 0; n < N; ++n) acc += g[n] * wr[n];
          gxr[k] += acc;
        }
      }
    }
    if (ws->requires_grad) {
      auto& gw = ws->grad_buffer();
      const T* X = xs->value.data.data();
      for (std::size_t m = 0; m < M; ++m) {
        const T* g = G + m * N;
        const T* xr = X + m * K;
        for (std::size_t k = 0; k < K; ++k) {
          const T xv = xr[k];
          if (xv == T{0}) continue;
          T* gwr = gw.data() + k * N;
          for (std::size_t n = 0; n < N; ++n) gwr[n] += xv * g[n];
        }
      }
    }
    if (bs && bs->requires_grad) {
      auto& gb = bs->grad_buffer();
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t n = 0; n < N; ++n) gb[n] += G[m * N + n];
    }
  });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_b) {
  const std::size_t ra = a->value.rank(), rb = b->value.rank();
  check(ra >= 3 && rb >= 3, Errc::shape_mismatch, "bmm: rank >= 3 inputs required");
  const std::size_t M = a->value.dim(ra - 2), K = a->value.dim(ra - 1);
  const std::size_t B = a->numel() / (M * K);
  const std::size_t N = transpose_b ? b->value.dim(rb - 2) : b->value.dim(rb - 1);
  const std::size_t Kb = transpose_b ? b->value.dim(rb - 1) : b->value.dim(rb - 2);
  check(Kb == K && b->numel() == B * K * N, Errc::shape_mismatch,
        "bmm: " + shape_str(a->shape()) + " x " + shape_str(b->shape()));
  Shape out_shape = a->shape();
  out_shape.back() = N;
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < B; ++i) {
    const T* A = a->value.data.data() + i * M * K;
    const T* Bm = b->value.data.data() + i * K * N;
    T* C = out.data.data() + i * M * N;
    for (std::size_t m = 0; m < M; ++m) {
      if (transpose_b) {
        for (std::size_t n = 0; n < N; ++n) {
          T acc{0};
          for (std::size_t k = 0; k < K; ++k) acc += A[m * K + k] * Bm[n * K + k];
          C[m * N + n] = acc;
        }
      } else {
        for (std::size_t k = 0; k < K; ++k) {
          const T av = A[m * K + k];
          for (std::size_t n = 0; n < N; ++n) C[m * N + n] += av * Bm[k * N + n];
        }
      }
    }
  }
  return make_result<T>(std::move(out), {a, b}, [B, M, K, N, transpose_b](Node<T>& self) {
    const auto& as = self.parents[0];
    const auto& bs = self.parents[1];
    const bool ga = as->requires_grad, gb = bs->requires_grad;
    T* GA = ga ? as->grad_buffer().data() : nullptr;
    T* GB = gb ? bs->grad_buffer().data() : nullptr;
    for (std::size_t i = 0; i < B; ++i) {
      const T* A = as->value.data.data() + i * M * K;
      const T* Bm = bs->value.data.data() + i * K * N;
      const T* G = self.grad.data() + i * M * N;
      for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t n = 0; n < N; ++n) {
          const T g = G[m * N + n];
          if (g == T{0}) continue;
          for (std::size_t k = 0; k < K; ++k) {
            const std::size_t bidx = transpose_b ? n * K + k : k * N + n;
            if (ga) GA[i * M * K + m * K + k] += g * Bm[bidx];
            if (gb) GB[i * K * N + bidx] += g * A[m * K + k];
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += b->value.data[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= b->value.data[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= b->value.data[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (pa->requires_grad) {
      auto& g = pa->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value.data[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value.data[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v *= factor;
  return make_result<T>(std::move(out), {a}, [factor](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Var<T> abs(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (auto& v : out.data) v = std::abs(v);
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    const auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = p->value.data[i];
      g[i] += x > T{0} ? self.grad[i] : (x < T{0} ? -self.grad[i] : T{0});
    }
  });
}

template <typename T>
Var<T> add_cyclic(const Var<T>& x, const Var<T>& b) {
  const std::size_t n = x->numel(), m = b->numel();
  check(m > 0 && n % m == 0, Errc::shape_mismatch, "add_cyclic: sizes do not tile");
  Tensor<T> out = x->value;
  for (std::size_t i = 0; i < n; ++i) out.data[i] += b->value.data[i % m];
  return make_result<T>(std::move(out), {x, b}, [n, m](Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i % m] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const std::size_t C = gamma->numel();
  check(!x->shape().empty() && x->shape().back() == C && beta->numel() == C, Errc::shape_mismatch,
        "layer_norm: " + shape_str(x->shape()));
  const std::size_t R = x->numel() / C;
  Tensor<T> out(x->shape());
  auto xhat = std::make_shared<std::vector<T>>(x->numel());
  auto inv_std = std::make_shared<std::vector<T>>(R);
  for (std::size_t r = 0; r < R; ++r) {
    const T* xr = x->value.data.data() + r * C;
    T mean{0};
    for (std::size_t c = 0; c < C; ++c) mean += xr[c];
    mean /= static_cast<T>(C);
    T var{0};
    for (std::size_t c = 0; c < C; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(C);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < C; ++c) {
      const T h = (xr[c] - mean) * is;
      (*xhat)[r * C + c] = h;
      out.data[r * C + c] = h * gamma->value.data[c] + beta->value.data[c];
    }
  }
  return make_result<T>(std::move(out), {x, gamma, beta}, [R, C, xhat, inv_std](Node<T>& self) {
    const auto& px = self.parents[0];
    const auto& pg = self.parents[1];
    const auto& pb = self.parents[2];
    const T* G = self.grad.data();
    if (pg->requires_grad || pb->requires_grad) {
      T* gg = pg->requires_grad ? pg->grad_buffer().data() : nullptr;
      T* gb = pb->requires_grad ? pb->grad_buffer().data() : nullptr;
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) {
          if (gg) gg[c] += G[r * C + c] * (*xhat)[r * C + c];
          if (gb) gb[c] += G[r * C + c];
        }
    }
    if (px->requires_grad) {
      auto& gx = px->grad_buffer();
      const T* gamma = pg->value.data.data();
      const T inv_c = T(1) / static_cast<T>(C);
      for (std::size_t r = 0; r < R; ++r) {
        T sum_d{0}, sum_dh{0};
        for (std::size_t c = 0; c < C; ++c) {
          const T d = G[r * C + c] * gamma[c];
          sum_d += d;
          sum_dh += d * (*xhat)[r * C + c];
        }
        for (std::size_t c = 0; c < C; ++c) {
          const T d = G[r * C + c] * gamma[c];
          gx[r * C + c] += (*inv_std)[r] * (d - inv_c * sum_d - (*xhat)[r * C + c] * inv_c * sum_dh);
        }
      }
    }
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  const std::size_t C = x->shape().back();
  const std::size_t R = x->numel() / C;
  Tensor<T> out(x->shape());
  for (std::size_t r = 0; r < R; ++r) {
    const T* xr = x->value.data.data() + r * C;
    T* yr = out.data.data() + r * C;
    const T mx = *std::max_element(xr, xr + C);
    T sum{0};
    for (std::size_t c = 0; c < C; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      sum += yr[c];
    }
    for (std::size_t c = 0; c < C; ++c) yr[c] /= sum;
  }
  return make_result<T>(std::move(out), {x}, [R, C](Node<T>& self) {
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < R; ++r) {
      const T* y = self.value.data.data() + r * C;
      const T* g = self.grad.data() + r * C;
      T dot{0};
      for (std::size_t c = 0; c < C; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < C; ++c) gx[r * C + c] += y[c] * (g[c] - dot);
    }
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  Tensor<T> out(x->shape());
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const T v = x->value.data[i];
    out.data[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  return make_result<T>(std::move(out), {x}, [inv_sqrt2](Node<T>& self) {
    const auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = p->value.data[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = std::exp(T(-0.5) * v * v) * inv_sqrt_2pi;
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  check(shape_numel(shape) == x->numel(), Errc::shape_mismatch,
        "reshape: " + shape_str(x->shape()) + " -> " + shape_str(shape));
  Tensor<T> out(std::move(shape), x->value.data);
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> resample(const Var<T>& x, const SparseMapPtr& map) {
  Tensor<T> out = apply(*map, x->value);
  return make_result<T>(std::move(out), {x}, [map](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const std::size_t per_in = map->in_numel;
    const std::size_t per_out = shape_numel(map->out_shape);
    const std::size_t batch = g.size() / per_in;
    const std::size_t taps = map->taps;
    for (std::size_t b = 0; b < batch; ++b) {
      T* gin = g.data() + b * per_in;
      const T* gout = self.grad.data() + b * per_out;
      for (std::size_t o = 0; o < per_out; ++o) {
        const T go = gout[o];
        if (go == T{0}) continue;
        for (std::size_t t = 0; t < taps; ++t) {
          const std::int64_t i = map->index[o * taps + t];
          if (i < 0) continue;
          const T w = map->weight.empty() ? T{1} : static_cast<T>(map->weight[o * taps + t]);
          gin[static_cast<std::size_t>(i)] += w * go;
        }
      }
    }
  });
}

template <typename T>
Var<T> blend_rows(const Var<T>& x, const Var<T>& token, std::span<const std::uint8_t> row_mask) {
  const std::size_t C = token->numel();
  check(x->shape().back() == C, Errc::shape_mismatch, "blend_rows: width mismatch");
  const std::size_t R = x->numel() / C;
  check(row_mask.size() == R, Errc::shape_mismatch, "blend_rows: mask has " + std::to_string(row_mask.size()) +
                                                        " rows, input has " + std::to_string(R));
  Tensor<T> out = x->value;
  for (std::size_t r = 0; r < R; ++r)
    if (row_mask[r]) std::copy(token->value.data.begin(), token->value.data.end(), out.data.begin() + r * C);
  auto mask = std::make_shared<std::vector<std::uint8_t>>(row_mask.begin(), row_mask.end());
  return make_result<T>(std::move(out), {x, token}, [R, C, mask](Node<T>& self) {
    const auto& px = self.parents[0];
    const auto& pt = self.parents[1];
    T* gx = px->requires_grad ? px->grad_buffer().data() : nullptr;
    T* gt = pt->requires_grad ? pt->grad_buffer().data() : nullptr;
    for (std::size_t r = 0; r < R; ++r) {
      const T* g = self.grad.data() + r * C;
      if ((*mask)[r]) {
        if (gt)
          for (std::size_t c = 0; c < C; ++c) gt[c] += g[c];
      } else if (gx) {
        for (std::size_t c = 0; c < C; ++c) gx[r * C + c] += g[c];
      }
    }
  });
}

template <typename T>
Var<T> scale_groups(const Var<T>& x, std::vector<T> factors) {
  const std::size_t groups = factors.size();
  check(groups > 0 && x->numel() % groups == 0, Errc::shape_mismatch, "scale_groups: sizes do not tile");
  const std::size_t per = x->numel() / groups;
  Tensor<T> out = x->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= factors[i / per];
  return make_result<T>(std::move(out), {x}, [per, f = std::move(factors)](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * f[i / per];
  });
}

template <typename T>
Var<T> mean_tokens(const Var<T>& x) {
  check(x->value.rank() == 3, Errc::shape_mismatch, "mean_tokens: expects [B, N, C]");
  const std::size_t B = x->value.dim(0), N = x->value.dim(1), C = x->value.dim(2);
  Tensor<T> out({B, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) out.data[b * C + c] += x->value.data[(b * N + n) * C + c];
  for (auto& v : out.data) v /= static_cast<T>(N);
  return make_result<T>(std::move(out), {x}, [B, N, C](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T inv = T(1) / static_cast<T>(N);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) g[(b * N + n) * C + c] += self.grad[b * C + c] * inv;
  });
}

template <typename T>
Var<T> concat_batch(const Var<T>& a, const Var<T>& b) {
  check(a->value.rank() >= 1 && b->value.rank() == a->value.rank(), Errc::shape_mismatch, "concat_batch: rank");
  for (std::size_t i = 1; i < a->value.rank(); ++i)
    check(a->value.dim(i) == b->value.dim(i), Errc::shape_mismatch, "concat_batch: trailing dims differ");
  Shape shape = a->shape();
  shape[0] += b->value.dim(0);
  Tensor<T> out(shape);
  std::copy(a->value.data.begin(), a->value.data.end(), out.data.begin());
  std::copy(b->value.data.begin(), b->value.data.end(), out.data.begin() + a->numel());
  const std::size_t na = a->numel();
  return make_result<T>(std::move(out), {a, b}, [na](Node<T>& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[na + i];
    }
  });
}

template <typename T>
Var<T> slice_batch(const Var<T>& x, std::size_t begin, std::size_t end) {
  check(x->value.rank() >= 1 && begin < end && end <= x->value.dim(0), Errc::shape_mismatch, "slice_batch: range");
  const std::size_t per = x->numel() / x->value.dim(0);
  Shape shape = x->shape();
  shape[0] = end - begin;
  Tensor<T> out(shape, std::vector<T>(x->value.data.begin() + begin * per, x->value.data.begin() + end * per));
  const std::size_t offset = begin * per;
  return make_result<T>(std::move(out), {x}, [offset](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
  });
}

template <typename T>
Var<T> masked_l1(const Var<T>& pred, const Tensor<T>& target, std::span<const std::uint8_t> mask) {
  check(pred->shape() == target.shape, Errc::shape_mismatch,
        "masked_l1: " + shape_str(pred->shape()) + " vs " + shape_str(target.shape));
  check(mask.size() == target.numel(), Errc::shape_mismatch, "masked_l1: mask size");
  std::size_t count = 0;
  T sum{0};
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++count;
    sum += std::abs(target.data[i] - pred->value.data[i]);
  }
  check(count > 0, Errc::empty_mask, "no masked values to average over");
  const T inv = T(1) / static_cast<T>(count);
  auto m = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
  auto tgt = std::make_shared<Tensor<T>>(target);
  return make_result<T>(Tensor<T>({}, {sum * inv}), {pred}, [m, tgt, inv](Node<T>& self) {
    const auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    const T go = self.grad[0] * inv;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!(*m)[i]) continue;
      const T d = p->value.data[i] - tgt->data[i];
      g[i] += d > T{0} ? go : (d < T{0} ? -go : T{0});
    }
  });
}

template <typename T>
Var<T> neg_cosine(const Var<T>& a, const Var<T>& b, T eps) {
  require_same_shape(a, b, "neg_cosine");
  const std::size_t C = a->shape().back();
  const std::size_t R = a->numel() / C;
  check(R > 0, Errc::shape_mismatch, "neg_cosine: empty input");
  auto na = std::make_shared<std::vector<T>>(R);
  auto nb = std::make_shared<std::vector<T>>(R);
  auto cos = std::make_shared<std::vector<T>>(R);
  T total{0};
  for (std::size_t r = 0; r < R; ++r) {
    const T* x = a->value.data.data() + r * C;
    const T* y = b->value.data.data() + r * C;
    T xx{0}, yy{0}, xy{0};
    for (std::size_t c = 0; c < C; ++c) {
      xx += x[c] * x[c];
      yy += y[c] * y[c];
      xy += x[c] * y[c];
    }
    (*na)[r] = std::max(std::sqrt(xx), eps);
    (*nb)[r] = std::max(std::sqrt(yy), eps);
    (*cos)[r] = xy / ((*na)[r] * (*nb)[r]);
    total += (*cos)[r];
  }
  const T inv_r = T(1) / static_cast<T>(R);
  return make_result<T>(Tensor<T>({}, {-total * inv_r}), {a, b}, [R, C, na, nb, cos, eps, inv_r](Node<T>& self) {
    const T go = -self.grad[0] * inv_r;
    // d cos / dx = y/(|x||y|) - cos * x/|x|^2 when |x| > eps; below the guard
    // the norm is constant so only the first term remains.
    auto accumulate = [&](const Var<T>& self_side, const Var<T>& other, const std::vector<T>& n_self,
                          const std::vector<T>& n_other) {
      if (!self_side->requires_grad) return;
      auto& g = self_side->grad_buffer();
      for (std::size_t r = 0; r < R; ++r) {
        const T* x = self_side->value.data.data() + r * C;
        const T* y = other->value.data.data() + r * C;
        const T inv = T(1) / (n_self[r] * n_other[r]);
        const bool guarded = n_self[r] <= eps;
        const T radial = guarded ? T{0} : (*cos)[r] / (n_self[r] * n_self[r]);
        for (std::size_t c = 0; c < C; ++c) g[r * C + c] += go * (y[c] * inv - radial * x[c]);
      }
    };
    accumulate(self.parents[0], self.parents[1], *na, *nb);
    accumulate(self.parents[1], self.parents[0], *nb, *na);
  });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  const std::size_t K = logits->shape().back();
  const std::size_t R = logits->numel() / K;
  check(labels.size() == R, Errc::shape_mismatch, "softmax_cross_entropy: label count");
  auto probs = std::make_shared<std::vector<T>>(logits->numel());
  T total{0};
  for (std::size_t r = 0; r < R; ++r) {
    check(labels[r] >= 0 && static_cast<std::size_t>(labels[r]) < K, Errc::label_out_of_range,
          "label " + std::to_string(labels[r]));
    const T* x = logits->value.data.data() + r * K;
    const T mx = *std::max_element(x, x + K);
    T sum{0};
    for (std::size_t k = 0; k < K; ++k) sum += std::exp(x[k] - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t k = 0; k < K; ++k) (*probs)[r * K + k] = std::exp(x[k] - lse);
    total += lse - x[labels[r]];
  }
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  const T inv_r = T(1) / static_cast<T>(R);
  return make_result<T>(Tensor<T>({}, {total * inv_r}), {logits}, [R, K, probs, lab, inv_r](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T go = self.grad[0] * inv_r;
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t k = 0; k < K; ++k)
        g[r * K + k] += go * ((*probs)[r * K + k] - (static_cast<int>(k) == (*lab)[r] ? T(1) : T(0)));
  });
}

template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& targets, T pos_weight) {
  check(logits->numel() == targets.numel(), Errc::shape_mismatch, "bce_with_logits: size mismatch");
  const std::size_t n = targets.numel();
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T x = logits->value.data[i];
    const T y = targets.data[i];
    // log(1 + exp(-|x|)) + max(x, 0) is the stable softplus
    const T sp_pos = std::log1p(std::exp(-std::abs(x))) + std::max(-x, T{0});  // -log sigmoid(x)
    const T sp_neg = sp_pos + x;                                                  // -log(1 - sigmoid(x))
    total += pos_weight * y * sp_pos + (T(1) - y) * sp_neg;
  }
  auto tgt = std::make_shared<Tensor<T>>(targets);
  const T inv = T(1) / static_cast<T>(n);
  return make_result<T>(Tensor<T>({}, {total * inv}), {logits}, [tgt, inv, pos_weight](Node<T>& self) {
    const auto& p = self.parents[0];
    auto& g = p->grad_buffer();
    const T go = self.grad[0] * inv;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = p->value.data[i];
      const T y = tgt->data[i];
      const T s = T(1) / (T(1) + std::exp(-x));
      g[i] += go * (pos_weight * y * (s - T(1)) + (T(1) - y) * s);
    }
  });
}

template <typename T>
Var<T> l1_mean(const Var<T>& pred, const Tensor<T>& target) {
  std::vector<std::uint8_t> all(target.numel(), 1);
  return masked_l1(pred, target, all);
}

#define GFM_INSTANTIATE(T)                                                                             \
  template void backward<T>(const Var<T>&);                                                           \
  template Tensor<T> apply<T>(const SparseMap&, const Tensor<T>&);                                    \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                             \
  template Var<T> bmm<T>(const Var<T>&, const Var<T>&, bool);                                         \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                               \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                               \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                               \
  template Var<T> scale<T>(const Var<T>&, T);                                                         \
  template Var<T> abs<T>(const Var<T>&);                                                              \
  template Var<T> add_cyclic<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                      \
  template Var<T> softmax<T>(const Var<T>&);                                                          \
  template Var<T> gelu<T>(const Var<T>&);                                                             \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                                   \
  template Var<T> resample<T>(const Var<T>&, const SparseMapPtr&);                                    \
  template Var<T> blend_rows<T>(const Var<T>&, const Var<T>&, std::span<const std::uint8_t>);         \
  template Var<T> scale_groups<T>(const Var<T>&, std::vector<T>);                                     \
  template Var<T> mean_tokens<T>(const Var<T>&);                                                      \
  template Var<T> concat_batch<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> slice_batch<T>(const Var<T>&, std::size_t, std::size_t);                            \
  template Var<T> masked_l1<T>(const Var<T>&, const Tensor<T>&, std::span<const std::uint8_t>);       \
  template Var<T> neg_cosine<T>(const Var<T>&, const Var<T>&, T);                                     \
  template Var<T> softmax_cross_entropy<T>(const Var<T>&, std::span<const int>);                      \
  template Var<T> bce_with_logits<T>(const Var<T>&, const Tensor<T>&, T);                             \
  template Var<T> l1_mean<T>(const Var<T>&, const Tensor<T>&);

GFM_INSTANTIATE(float)
GFM_INSTANTIATE(double)
#undef GFM_INSTANTIATE

}  // namespace gfm::ag
