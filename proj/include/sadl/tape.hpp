#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "sadl/tensor.hpp"

namespace sadl {

// Reverse-mode tape over TensorT values. One training step builds one tape
// on one thread, runs backward once (or more; gradients are recomputed from
// scratch each time), then the tape is discarded. Node ids are append-only,
// so reverse id order is a reverse topological order.
template <typename S>
class TapeT {
 public:
  using Tensor = TensorT<S>;
  using Array = typename Tensor::Array;
  using BackwardFn = std::function<void(const Array& upstream, TapeT& tape)>;

  struct Node {
    std::vector<int> inputs;
    Shape shape;
    BackwardFn backward;  // empty for leaves and gradient boundaries
  };

  // When set, relu/abs forward passes append their pre-activation values.
  // Used by the finite-difference checker to detect kink crossings.
  std::vector<S>* kink_log = nullptr;

  // Gradient-check support for stop_gradient: a boundary is a constant, so
  // a perturbed re-evaluation must reuse the base run's boundary values.
  // The base run records them via sg_record; perturbed runs replay them via
  // sg_pin (matched by call order, which is deterministic per graph).
  std::vector<Array>* sg_record = nullptr;
  const std::vector<Array>* sg_pin = nullptr;
  std::size_t sg_cursor = 0;

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  // Registers t as a differentiable leaf and returns a tensor bound to it.
  Tensor leaf(const Tensor& t) {
    Tensor out = t;
    out.node = add_node(t.shape, {}, nullptr);
    return out;
  }

  int add_node(Shape shape, std::vector<int> inputs, BackwardFn backward) {
    nodes_.push_back(Node{std::move(inputs), std::move(shape), std::move(backward)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void accumulate(int id, const Array& g) {
    if (id < 0) return;
    auto& slot = grads_[static_cast<std::size_t>(id)];
    if (slot.size() == 0)
      slot = g;
    else
      slot += g;
  }

  // Gradient of the last backward() wrt node id (zeros if unreached).
  Array grad(int id) const {
    if (static_cast<std::size_t>(id) < grads_.size() &&
        grads_[static_cast<std::size_t>(id)].size() > 0)
      return grads_[static_cast<std::size_t>(id)];
    return Array::Zero(numel(nodes_[static_cast<std::size_t>(id)].shape));
  }

  // Reverse accumulation from a scalar loss. Deterministic: nodes are
  // visited in strictly decreasing id order, each at most once.
  void backward(const Tensor& loss) {
    if (loss.size() != 1)
      throw ShapeError("backward requires a scalar loss, got shape " +
                       shape_str(loss.shape));
    if (loss.node < 0) throw Error("backward: loss is not on the tape");
    grads_.assign(nodes_.size(), Array());
    grads_[static_cast<std::size_t>(loss.node)] = Array::Constant(1, S(1));
    for (int id = loss.node; id >= 0; --id) {
      const auto& g = grads_[static_cast<std::size_t>(id)];
      if (g.size() == 0) continue;
      const auto& fn = nodes_[static_cast<std::size_t>(id)].backward;
      if (fn) fn(g, *this);
    }
  }

  // All tape nodes the given node depends on (inclusive). stop_gradient
  // nodes list no inputs, so they bound the enumeration.
  std::vector<char> ancestors(int id) const {
    std::vector<char> seen(nodes_.size(), 0);
    std::vector<int> stack{id};
    while (!stack.empty()) {
      int n = stack.back();
      stack.pop_back();
      if (n < 0 || seen[static_cast<std::size_t>(n)]) continue;
      seen[static_cast<std::size_t>(n)] = 1;
      for (int in : nodes_[static_cast<std::size_t>(n)].inputs) stack.push_back(in);
    }
    return seen;
  }

 private:
  std::vector<Node> nodes_;
  std::vector<Array> grads_;
};

using Tape = TapeT<double>;

namespace detail {

// Sums a full-shape gradient down to a trailing-suffix broadcast shape.
template <typename S>
typename TensorT<S>::Array reduce_to_suffix(
    const typename TensorT<S>::Array& g, Index inner) {
  using Array = typename TensorT<S>::Array;
  Index outer = g.size() / inner;
  Array out = Array::Zero(inner);
  for (Index o = 0; o < outer; ++o) out += g.segment(o * inner, inner);
  return out;
}

}  // namespace detail

enum class EwKind { add, sub, mul };

// Elementwise add/sub/mul; b may broadcast over the trailing axes of a
// (equal shapes, scalar b, or b.shape a suffix of a.shape).
template <typename S>
TensorT<S> elementwise(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b,
                       EwKind kind) {
  using Array = typename TensorT<S>::Array;
  if (!suffix_broadcastable(a.shape, b.shape))
    throw ShapeError("elementwise: cannot broadcast " + shape_str(b.shape) +
                     " over trailing axes of " + shape_str(a.shape));
  const Index inner = numel(b.shape);
  const Index n = a.size();
  TensorT<S> out;
  out.shape = a.shape;
  out.data.resize(n);
  for (Index i = 0; i < n; ++i) {
    S bv = b.data[i % inner];
    S av = a.data[i];
    out.data[i] = kind == EwKind::add ? av + bv
                : kind == EwKind::sub ? av - bv
                                      : av * bv;
  }
  Array a_data = a.data, b_data = b.data;
  int an = a.node, bn = b.node;
  out.node = tape.add_node(
      out.shape, {a.node, b.node},
      [kind, a_data, b_data, an, bn, inner, n](const Array& up, TapeT<S>& t) {
        if (an >= 0) {
          if (kind == EwKind::mul) {
            Array da(n);
            for (Index i = 0; i < n; ++i) da[i] = up[i] * b_data[i % inner];
            t.accumulate(an, da);
          } else {
            t.accumulate(an, up);
          }
        }
        if (bn >= 0) {
          Array full(n);
          for (Index i = 0; i < n; ++i) {
            full[i] = kind == EwKind::add ? up[i]
                    : kind == EwKind::sub ? -up[i]
                                          : up[i] * a_data[i];
          }
          t.accumulate(bn, inner == n ? full
                                      : detail::reduce_to_suffix<S>(full, inner));
        }
      });
  return out;
}

template <typename S>
TensorT<S> add(TapeT<S>& t, const TensorT<S>& a, const TensorT<S>& b) {
  return elementwise(t, a, b, EwKind::add);
}
template <typename S>
TensorT<S> sub(TapeT<S>& t, const TensorT<S>& a, const TensorT<S>& b) {
  return elementwise(t, a, b, EwKind::sub);
}
template <typename S>
TensorT<S> mul(TapeT<S>& t, const TensorT<S>& a, const TensorT<S>& b) {
  return elementwise(t, a, b, EwKind::mul);
}

template <typename S>
TensorT<S> scale(TapeT<S>& tape, const TensorT<S>& a, S c) {
  using Array = typename TensorT<S>::Array;
  TensorT<S> out(a.shape, (a.data * c).eval());
  int an = a.node;
  out.node = tape.add_node(out.shape, {an},
                           [an, c](const Array& up, TapeT<S>& t) {
                             t.accumulate(an, (up * c).eval());
                           });
  return out;
}

template <typename S>
TensorT<S> add_const(TapeT<S>& tape, const TensorT<S>& a, S c) {
  using Array = typename TensorT<S>::Array;
  TensorT<S> out(a.shape, (a.data + c).eval());
  int an = a.node;
  out.node = tape.add_node(out.shape, {an},
                           [an](const Array& up, TapeT<S>& t) {
                             t.accumulate(an, up);
                           });
  return out;
}

// Sum of all elements -> rank-0 scalar.
template <typename S>
TensorT<S> sum(TapeT<S>& tape, const TensorT<S>& a) {
  using Array = typename TensorT<S>::Array;
  TensorT<S> out = TensorT<S>::scalar(a.data.sum());
  int an = a.node;
  Index n = a.size();
  out.node = tape.add_node({}, {an}, [an, n](const Array& up, TapeT<S>& t) {
    t.accumulate(an, Array::Constant(n, up[0]));
  });
  return out;
}

template <typename S>
TensorT<S> mean(TapeT<S>& tape, const TensorT<S>& a) {
  using Array = typename TensorT<S>::Array;
  Index n = a.size();
  TensorT<S> out = TensorT<S>::scalar(a.data.sum() / static_cast<S>(n));
  int an = a.node;
  out.node = tape.add_node({}, {an}, [an, n](const Array& up, TapeT<S>& t) {
    t.accumulate(an, Array::Constant(n, up[0] / static_cast<S>(n)));
  });
  return out;
}

// Stacks rank-0 scalars into a length-n vector.
template <typename S>
TensorT<S> stack_scalars(TapeT<S>& tape, const std::vector<TensorT<S>>& items) {
  using Array = typename TensorT<S>::Array;
  Index n = static_cast<Index>(items.size());
  TensorT<S> out;
  out.shape = {n};
  out.data.resize(n);
  std::vector<int> ins(items.size());
  for (Index i = 0; i < n; ++i) {
    if (items[static_cast<std::size_t>(i)].size() != 1)
      throw ShapeError("stack_scalars: item is not a scalar");
    out.data[i] = items[static_cast<std::size_t>(i)].data[0];
    ins[static_cast<std::size_t>(i)] = items[static_cast<std::size_t>(i)].node;
  }
  out.node = tape.add_node(out.shape, ins, [ins](const Array& up, TapeT<S>& t) {
    for (std::size_t i = 0; i < ins.size(); ++i)
      if (ins[i] >= 0) t.accumulate(ins[i], Array::Constant(1, up[static_cast<Index>(i)]));
  });
  return out;
}

// Concatenates [Mi x C] blocks along the first axis.
template <typename S>
TensorT<S> concat_rows(TapeT<S>& tape, const std::vector<TensorT<S>>& parts) {
  using Array = typename TensorT<S>::Array;
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  Index cols = parts[0].shape.back();
  Index rows = 0, total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.shape[1] != cols)
      throw ShapeError("concat_rows: parts must be [Mi x C] with equal C");
    rows += p.shape[0];
    total += p.size();
  }
  TensorT<S> out;
  out.shape = {rows, cols};
  out.data.resize(total);
  std::vector<int> ins;
  std::vector<Index> sizes;
  Index off = 0;
  for (const auto& p : parts) {
    out.data.segment(off, p.size()) = p.data;
    ins.push_back(p.node);
    sizes.push_back(p.size());
    off += p.size();
  }
  out.node = tape.add_node(out.shape, ins,
                           [ins, sizes](const Array& up, TapeT<S>& t) {
                             Index o = 0;
                             for (std::size_t i = 0; i < ins.size(); ++i) {
                               if (ins[i] >= 0)
                                 t.accumulate(ins[i], up.segment(o, sizes[i]).eval());
                               o += sizes[i];
                             }
                           });
  return out;
}

// Slice along the first axis: [D0, rest...] -> [rest...]. Contiguous in
// row-major storage, so forward and backward are segment copies.
template <typename S>
TensorT<S> slice_first(TapeT<S>& tape, const TensorT<S>& a, Index i) {
  using Array = typename TensorT<S>::Array;
  if (a.rank() < 1) throw ShapeError("slice_first: rank-0 input");
  Index d0 = a.shape[0];
  if (i < 0 || i >= d0) throw ShapeError("slice_first: index out of range");
  Shape rest(a.shape.begin() + 1, a.shape.end());
  Index chunk = numel(rest);
  TensorT<S> out(rest, a.data.segment(i * chunk, chunk).eval());
  int an = a.node;
  Index total = a.size();
  out.node = tape.add_node(out.shape, {an},
                           [an, i, chunk, total](const Array& up, TapeT<S>& t) {
                             if (an < 0) return;
                             Array g = Array::Zero(total);
                             g.segment(i * chunk, chunk) = up;
                             t.accumulate(an, g);
                           });
  return out;
}

template <typename S>
TensorT<S> matmul(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
  using Array = typename TensorT<S>::Array;
  using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape) +
                     " x " + shape_str(b.shape));
  const Index m = a.shape[0], k = a.shape[1], n = b.shape[1];
  TensorT<S> out;
  out.shape = {m, n};
  out.data.resize(m * n);
  Eigen::Map<const RowMat> A(a.data.data(), m, k), B(b.data.data(), k, n);
  Eigen::Map<RowMat> C(out.data.data(), m, n);
  C.noalias() = A * B;
  Array a_data = a.data, b_data = b.data;
  int an = a.node, bn = b.node;
  out.node = tape.add_node(
      out.shape, {an, bn},
      [a_data, b_data, an, bn, m, k, n](const Array& up, TapeT<S>& t) {
        Eigen::Map<const RowMat> dC(up.data(), m, n);
        Eigen::Map<const RowMat> A2(a_data.data(), m, k), B2(b_data.data(), k, n);
        if (an >= 0) {
          Array da(m * k);
          Eigen::Map<RowMat>(da.data(), m, k).noalias() = dC * B2.transpose();
          t.accumulate(an, da);
        }
        if (bn >= 0) {
          Array db(k * n);
          Eigen::Map<RowMat>(db.data(), k, n).noalias() = A2.transpose() * dC;
          t.accumulate(bn, db);
        }
      });
  return out;
}

namespace detail {

// im2col for one batch element: column j = all kernel-window taps of
// output pixel j, rows ordered (ci, kr, kc).
template <typename S>
void fill_col(const S* in, Index Cin, Index H, Index W, Index kk, Index stride,
              Index pad, Index OH, Index OW,
              Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& col) {
  for (Index oh = 0; oh < OH; ++oh)
    for (Index ow = 0; ow < OW; ++ow) {
      Index j = oh * OW + ow;
      Index r = 0;
      for (Index ci = 0; ci < Cin; ++ci)
        for (Index kr = 0; kr < kk; ++kr) {
          Index ih = oh * stride - pad + kr;
          for (Index kc = 0; kc < kk; ++kc, ++r) {
            Index iw = ow * stride - pad + kc;
            col(r, j) = (ih >= 0 && ih < H && iw >= 0 && iw < W)
                            ? in[(ci * H + ih) * W + iw]
                            : S(0);
          }
        }
    }
}

}  // namespace detail

// 2-D cross-correlation with zero padding over [B,Cin,H,W] input and
// [Cout,Cin,k,k] kernel. Output H' = (H + 2 pad - k) / stride + 1.
template <typename S>
TensorT<S> conv2d(TapeT<S>& tape, const TensorT<S>& input,
                  const TensorT<S>& kernel, Index stride, Index pad) {
  using Array = typename TensorT<S>::Array;
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  if (input.rank() != 4 || kernel.rank() != 4)
    throw ShapeError("conv2d: input and kernel must be rank 4");
  const Index B = input.shape[0], Cin = input.shape[1], H = input.shape[2],
              W = input.shape[3];
  const Index Cout = kernel.shape[0], kk = kernel.shape[2];
  if (kernel.shape[1] != Cin || kernel.shape[3] != kk)
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape) +
                     " does not match input channels " + std::to_string(Cin));
  if (kk < 1 || stride < 1 || pad < 0)
    throw ShapeError("conv2d: require k >= 1, stride >= 1, pad >= 0");
  if (H + 2 * pad < kk || W + 2 * pad < kk)
    throw ShapeError("conv2d: padded input smaller than kernel");
  const Index OH = (H + 2 * pad - kk) / stride + 1;
  const Index OW = (W + 2 * pad - kk) / stride + 1;
  const Index taps = Cin * kk * kk;

  TensorT<S> out;
  out.shape = {B, Cout, OH, OW};
  out.data.resize(B * Cout * OH * OW);
  Eigen::Map<const RowMat> K(kernel.data.data(), Cout, taps);
  Mat col(taps, OH * OW);
  for (Index b = 0; b < B; ++b) {
    detail::fill_col(input.data.data() + b * Cin * H * W, Cin, H, W, kk, stride,
                     pad, OH, OW, col);
    Mat prod = K * col;  // [Cout x OH*OW]
    for (Index co = 0; co < Cout; ++co)
      for (Index j = 0; j < OH * OW; ++j)
        out.data[((b * Cout + co) * OH * OW) + j] = prod(co, j);
  }

  Array in_data = input.data, k_data = kernel.data;
  int in_node = input.node, k_node = kernel.node;
  out.node = tape.add_node(
      out.shape, {in_node, k_node},
      [in_data, k_data, in_node, k_node, B, Cin, H, W, Cout, kk, stride, pad,
       OH, OW, taps](const Array& up, TapeT<S>& t) {
        Eigen::Map<const RowMat> K2(k_data.data(), Cout, taps);
        Array dk = Array::Zero(k_data.size());
        Eigen::Map<RowMat> dK(dk.data(), Cout, taps);
        Array din = Array::Zero(in_data.size());
        Mat col(taps, OH * OW), dout(Cout, OH * OW);
        for (Index b = 0; b < B; ++b) {
          for (Index co = 0; co < Cout; ++co)
            for (Index j = 0; j < OH * OW; ++j)
              dout(co, j) = up[((b * Cout + co) * OH * OW) + j];
          if (k_node >= 0) {
            detail::fill_col(in_data.data() + b * Cin * H * W, Cin, H, W, kk,
                             stride, pad, OH, OW, col);
            dK.noalias() += dout * col.transpose();
          }
          if (in_node >= 0) {
            Mat dcol = K2.transpose() * dout;  // [taps x OH*OW]
            S* dst = din.data() + b * Cin * H * W;
            for (Index oh = 0; oh < OH; ++oh)
              for (Index ow = 0; ow < OW; ++ow) {
                Index j = oh * OW + ow;
                Index r = 0;
                for (Index ci = 0; ci < Cin; ++ci)
                  for (Index kr = 0; kr < kk; ++kr) {
                    Index ih = oh * stride - pad + kr;
                    for (Index kc = 0; kc < kk; ++kc, ++r) {
                      Index iw = ow * stride - pad + kc;
                      if (ih >= 0 && ih < H && iw >= 0 && iw < W)
                        dst[(ci * H + ih) * W + iw] += dcol(r, j);
                    }
                  }
              }
          }
        }
        if (k_node >= 0) t.accumulate(k_node, dk);
        if (in_node >= 0) t.accumulate(in_node, din);
      });
  return out;
}

// max(x, 0); subgradient at 0 is 0.
template <typename S>
TensorT<S> relu(TapeT<S>& tape, const TensorT<S>& x) {
  using Array = typename TensorT<S>::Array;
  if (tape.kink_log)
    for (Index i = 0; i < x.size(); ++i) tape.kink_log->push_back(x.data[i]);
  TensorT<S> out(x.shape, x.data.max(S(0)).eval());
  Array x_data = x.data;
  int xn = x.node;
  out.node = tape.add_node(out.shape, {xn},
                           [x_data, xn](const Array& up, TapeT<S>& t) {
                             if (xn < 0) return;
                             Array g(up.size());
                             for (Index i = 0; i < up.size(); ++i)
                               g[i] = x_data[i] > S(0) ? up[i] : S(0);
                             t.accumulate(xn, g);
                           });
  return out;
}

// |x|; subgradient at 0 is 0. Shares the kink log with relu.
template <typename S>
TensorT<S> abs(TapeT<S>& tape, const TensorT<S>& x) {
  using Array = typename TensorT<S>::Array;
  if (tape.kink_log)
    for (Index i = 0; i < x.size(); ++i) tape.kink_log->push_back(x.data[i]);
  TensorT<S> out(x.shape, x.data.abs().eval());
  Array x_data = x.data;
  int xn = x.node;
  out.node = tape.add_node(
      out.shape, {xn}, [x_data, xn](const Array& up, TapeT<S>& t) {
        if (xn < 0) return;
        Array g(up.size());
        for (Index i = 0; i < up.size(); ++i)
          g[i] = x_data[i] > S(0) ? up[i] : (x_data[i] < S(0) ? -up[i] : S(0));
        t.accumulate(xn, g);
      });
  return out;
}

// Per-feature standardization of [B x F] rows with batch statistics
// (population variance), then affine gamma * xhat + beta.
template <typename S>
TensorT<S> batch_norm(TapeT<S>& tape, const TensorT<S>& x,
                      const TensorT<S>& gamma, const TensorT<S>& beta, S eps) {
  using Array = typename TensorT<S>::Array;
  if (x.rank() != 2) throw ShapeError("batch_norm: input must be [B x F]");
  const Index B = x.shape[0], F = x.shape[1];
  if (B < 2) throw ShapeError("batch_norm: batch size must be >= 2");
  if (numel(gamma.shape) != F || numel(beta.shape) != F)
    throw ShapeError("batch_norm: gamma/beta must have F elements");
  if (!(eps > S(0))) throw Error("batch_norm: eps must be positive");

  Array xhat(B * F), inv_std(F);
  for (Index j = 0; j < F; ++j) {
    S mu = 0;
    for (Index b = 0; b < B; ++b) mu += x.data[b * F + j];
    mu /= static_cast<S>(B);
    S var = 0;
    for (Index b = 0; b < B; ++b) {
      S d = x.data[b * F + j] - mu;
      var += d * d;
    }
    var /= static_cast<S>(B);
    inv_std[j] = S(1) / std::sqrt(var + eps);
    for (Index b = 0; b < B; ++b)
      xhat[b * F + j] = (x.data[b * F + j] - mu) * inv_std[j];
  }
  TensorT<S> out;
  out.shape = x.shape;
  out.data.resize(B * F);
  for (Index b = 0; b < B; ++b)
    for (Index j = 0; j < F; ++j)
      out.data[b * F + j] = gamma.data[j] * xhat[b * F + j] + beta.data[j];

  Array g_data = gamma.data;
  int xn = x.node, gn = gamma.node, bn = beta.node;
  out.node = tape.add_node(
      out.shape, {xn, gn, bn},
      [xhat, inv_std, g_data, xn, gn, bn, B, F](const Array& up, TapeT<S>& t) {
        if (gn >= 0) {
          Array dg = Array::Zero(F);
          for (Index b = 0; b < B; ++b)
            for (Index j = 0; j < F; ++j) dg[j] += up[b * F + j] * xhat[b * F + j];
          t.accumulate(gn, dg);
        }
        if (bn >= 0) {
          Array db = Array::Zero(F);
          for (Index b = 0; b < B; ++b)
            for (Index j = 0; j < F; ++j) db[j] += up[b * F + j];
          t.accumulate(bn, db);
        }
        if (xn >= 0) {
          Array dx(B * F);
          for (Index j = 0; j < F; ++j) {
            S sum_dy = 0, sum_dy_xhat = 0;
            for (Index b = 0; b < B; ++b) {
              sum_dy += up[b * F + j];
              sum_dy_xhat += up[b * F + j] * xhat[b * F + j];
            }
            S mean_dy = sum_dy / static_cast<S>(B);
            S mean_dy_xhat = sum_dy_xhat / static_cast<S>(B);
            for (Index b = 0; b < B; ++b)
              dx[b * F + j] = g_data[j] * inv_std[j] *
                              (up[b * F + j] - mean_dy -
                               xhat[b * F + j] * mean_dy_xhat);
          }
          t.accumulate(xn, dx);
        }
      });
  return out;
}

// [B,C,H,W] -> [B*H*W, C] so conv features can reuse the row batch norm
// (per-channel statistics over batch and space). Pure permutation.
template <typename S>
TensorT<S> bchw_to_rows(TapeT<S>& tape, const TensorT<S>& x) {
  using Array = typename TensorT<S>::Array;
  if (x.rank() != 4) throw ShapeError("bchw_to_rows: input must be rank 4");
  const Index B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  TensorT<S> out;
  out.shape = {B * H * W, C};
  out.data.resize(x.size());
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c)
      for (Index h = 0; h < H; ++h)
        for (Index w = 0; w < W; ++w)
          out.data[((b * H + h) * W + w) * C + c] =
              x.data[((b * C + c) * H + h) * W + w];
  int xn = x.node;
  out.node = tape.add_node(
      out.shape, {xn}, [xn, B, C, H, W](const Array& up, TapeT<S>& t) {
        if (xn < 0) return;
        Array g(B * C * H * W);
        for (Index b = 0; b < B; ++b)
          for (Index c = 0; c < C; ++c)
            for (Index h = 0; h < H; ++h)
              for (Index w = 0; w < W; ++w)
                g[((b * C + c) * H + h) * W + w] =
                    up[((b * H + h) * W + w) * C + c];
        t.accumulate(xn, g);
      });
  return out;
}

// Inverse of bchw_to_rows.
template <typename S>
TensorT<S> rows_to_bchw(TapeT<S>& tape, const TensorT<S>& x, Index B, Index C,
                        Index H, Index W) {
  using Array = typename TensorT<S>::Array;
  if (x.rank() != 2 || x.shape[0] != B * H * W || x.shape[1] != C)
    throw ShapeError("rows_to_bchw: input shape mismatch");
  TensorT<S> out;
  out.shape = {B, C, H, W};
  out.data.resize(x.size());
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c)
      for (Index h = 0; h < H; ++h)
        for (Index w = 0; w < W; ++w)
          out.data[((b * C + c) * H + h) * W + w] =
              x.data[((b * H + h) * W + w) * C + c];
  int xn = x.node;
  out.node = tape.add_node(
      out.shape, {xn}, [xn, B, C, H, W](const Array& up, TapeT<S>& t) {
        if (xn < 0) return;
        Array g(B * C * H * W);
        for (Index b = 0; b < B; ++b)
          for (Index c = 0; c < C; ++c)
            for (Index h = 0; h < H; ++h)
              for (Index w = 0; w < W; ++w)
                g[((b * H + h) * W + w) * C + c] =
                    up[((b * C + c) * H + h) * W + w];
        t.accumulate(xn, g);
      });
  return out;
}

// Nearest-neighbour 2x upsampling of [B,C,H,W]; backward sums each 2x2 block.
template <typename S>
TensorT<S> upsample_nearest2x(TapeT<S>& tape, const TensorT<S>& x) {
  using Array = typename TensorT<S>::Array;
  if (x.rank() != 4) throw ShapeError("upsample_nearest2x: input must be rank 4");
  const Index B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  TensorT<S> out;
  out.shape = {B, C, 2 * H, 2 * W};
  out.data.resize(x.size() * 4);
  for (Index bc = 0; bc < B * C; ++bc)
    for (Index h = 0; h < H; ++h)
      for (Index w = 0; w < W; ++w) {
        S v = x.data[(bc * H + h) * W + w];
        Index base = bc * 4 * H * W;
        out.data[base + (2 * h) * 2 * W + 2 * w] = v;
        out.data[base + (2 * h) * 2 * W + 2 * w + 1] = v;
        out.data[base + (2 * h + 1) * 2 * W + 2 * w] = v;
        out.data[base + (2 * h + 1) * 2 * W + 2 * w + 1] = v;
      }
  int xn = x.node;
  out.node = tape.add_node(
      out.shape, {xn}, [xn, B, C, H, W](const Array& up, TapeT<S>& t) {
        if (xn < 0) return;
        Array g(B * C * H * W);
        for (Index bc = 0; bc < B * C; ++bc)
          for (Index h = 0; h < H; ++h)
            for (Index w = 0; w < W; ++w) {
              Index base = bc * 4 * H * W;
              g[(bc * H + h) * W + w] =
                  up[base + (2 * h) * 2 * W + 2 * w] +
                  up[base + (2 * h) * 2 * W + 2 * w + 1] +
                  up[base + (2 * h + 1) * 2 * W + 2 * w] +
                  up[base + (2 * h + 1) * 2 * W + 2 * w + 1];
            }
        t.accumulate(xn, g);
      });
  return out;
}

// [B,C,H,W] + bias[C], broadcast over batch and space.
template <typename S>
TensorT<S> add_channel_bias(TapeT<S>& tape, const TensorT<S>& x,
                            const TensorT<S>& bias) {
  using Array = typename TensorT<S>::Array;
  if (x.rank() != 4 || numel(bias.shape) != x.shape[1])
    throw ShapeError("add_channel_bias: need [B,C,H,W] and bias of C elements");
  const Index B = x.shape[0], C = x.shape[1], HW = x.shape[2] * x.shape[3];
  TensorT<S> out;
  out.shape = x.shape;
  out.data.resize(x.size());
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c)
      out.data.segment((b * C + c) * HW, HW) =
          x.data.segment((b * C + c) * HW, HW) + bias.data[c];
  int xn = x.node, bn = bias.node;
  out.node = tape.add_node(
      out.shape, {xn, bn}, [xn, bn, B, C, HW](const Array& up, TapeT<S>& t) {
        if (xn >= 0) t.accumulate(xn, up);
        if (bn >= 0) {
          Array db = Array::Zero(C);
          for (Index b = 0; b < B; ++b)
            for (Index c = 0; c < C; ++c)
              db[c] += up.segment((b * C + c) * HW, HW).sum();
          t.accumulate(bn, db);
        }
      });
  return out;
}

// Cosine similarity of two vectors with an eps guard on each norm:
// (a / (|a| + eps)) . (b / (|b| + eps)). Rank-0 output.
template <typename S>
TensorT<S> cosine_similarity(TapeT<S>& tape, const TensorT<S>& a,
                             const TensorT<S>& b, S eps = S(1e-8)) {
  using Array = typename TensorT<S>::Array;
  if (a.size() != b.size() || a.size() < 1)
    throw ShapeError("cosine_similarity: vectors must have equal size >= 1");
  const S na = std::sqrt(static_cast<S>(a.data.square().sum()));
  const S nb = std::sqrt(static_cast<S>(b.data.square().sum()));
  const S alpha = S(1) / (na + eps), beta = S(1) / (nb + eps);
  const S dot = (a.data * b.data).sum();
  TensorT<S> out = TensorT<S>::scalar(dot * alpha * beta);
  Array a_data = a.data, b_data = b.data;
  int an = a.node, bn = b.node;
  out.node = tape.add_node(
      {}, {an, bn},
      [a_data, b_data, an, bn, na, nb, alpha, beta, dot](const Array& up,
                                                        TapeT<S>& t) {
        S u = up[0];
        if (an >= 0) {
          Array da = (b_data * (alpha * beta)).eval();
          if (na > S(0)) da -= a_data * (dot * beta * alpha * alpha / na);
          t.accumulate(an, (da * u).eval());
        }
        if (bn >= 0) {
          Array db = (a_data * (alpha * beta)).eval();
          if (nb > S(0)) db -= b_data * (dot * alpha * beta * beta / nb);
          t.accumulate(bn, (db * u).eval());
        }
      });
  return out;
}

// Shift-stable softmax over a vector.
template <typename S>
TensorT<S> softmax(TapeT<S>& tape, const TensorT<S>& x) {
  using Array = typename TensorT<S>::Array;
  if (x.size() < 1) throw ShapeError("softmax: empty input");
  Array y = (x.data - x.data.maxCoeff()).exp();
  y /= y.sum();
  TensorT<S> out(x.shape, y);
  int xn = x.node;
  out.node = tape.add_node(out.shape, {xn},
                           [y, xn](const Array& up, TapeT<S>& t) {
                             if (xn < 0) return;
                             S dot = (up * y).sum();
                             t.accumulate(xn, (y * (up - dot)).eval());
                           });
  return out;
}

// Mean over all pixels of -log softmax(logits)[target] for binary targets.
// logits: [B,2,H,W]; targets: flat row-major B*H*W values in {0,1}.
template <typename S>
TensorT<S> cross_entropy_2class(TapeT<S>& tape, const TensorT<S>& logits,
                                const std::vector<std::uint8_t>& targets) {
  using Array = typename TensorT<S>::Array;
  if (logits.rank() != 4 || logits.shape[1] != 2)
    throw ShapeError("cross_entropy_2class: logits must be [B,2,H,W]");
  const Index B = logits.shape[0], H = logits.shape[2], W = logits.shape[3];
  const Index P = B * H * W;
  if (static_cast<Index>(targets.size()) != P)
    throw ShapeError("cross_entropy_2class: target size mismatch");
  for (std::uint8_t v : targets)
    if (v > 1) throw Error("cross_entropy_2class: target values must be 0 or 1");

  auto lidx = [H, W](Index b, Index c, Index h, Index w) {
    return ((b * 2 + c) * H + h) * W + w;
  };
  S total = 0;
  for (Index b = 0; b < B; ++b)
    for (Index h = 0; h < H; ++h)
      for (Index w = 0; w < W; ++w) {
        S l0 = logits.data[lidx(b, 0, h, w)], l1 = logits.data[lidx(b, 1, h, w)];
        S m = std::max(l0, l1);
        S lse = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
        S lt = targets[(b * H + h) * W + w] ? l1 : l0;
        total += lse - lt;
      }
  TensorT<S> out = TensorT<S>::scalar(total / static_cast<S>(P));
  Array l_data = logits.data;
  int ln = logits.node;
  out.node = tape.add_node(
      {}, {ln}, [l_data, targets, ln, B, H, W, P, lidx](const Array& up, TapeT<S>& t) {
        if (ln < 0) return;
        Array g(l_data.size());
        S u = up[0] / static_cast<S>(P);
        for (Index b = 0; b < B; ++b)
          for (Index h = 0; h < H; ++h)
            for (Index w = 0; w < W; ++w) {
              S l0 = l_data[lidx(b, 0, h, w)], l1 = l_data[lidx(b, 1, h, w)];
              S m = std::max(l0, l1);
              S e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
              S z = e0 + e1;
              std::uint8_t tgt = targets[(b * H + h) * W + w];
              g[lidx(b, 0, h, w)] = (e0 / z - (tgt == 0 ? S(1) : S(0))) * u;
              g[lidx(b, 1, h, w)] = (e1 / z - (tgt == 1 ? S(1) : S(0))) * u;
            }
        t.accumulate(ln, g);
      });
  return out;
}

// Forward identity whose backward contributes nothing. The node lists no
// inputs, so ancestor enumeration stops here as well.
template <typename S>
TensorT<S> stop_gradient(TapeT<S>& tape, const TensorT<S>& x) {
  TensorT<S> out(x.shape, x.data);
  if (tape.sg_pin) {
    if (tape.sg_cursor >= tape.sg_pin->size())
      throw Error("stop_gradient: pinned-value replay ran past the base run");
    out.data = (*tape.sg_pin)[tape.sg_cursor++];
  }
  if (tape.sg_record) tape.sg_record->push_back(out.data);
  out.node = tape.add_node(out.shape, {}, nullptr);
  return out;
}

// Gathers embedding vectors X[:, r, c] for each (r, c) coordinate from a
// [C,H,W] map into [M x C]. Backward scatters, accumulating on duplicates.
template <typename S>
TensorT<S> gather(TapeT<S>& tape, const TensorT<S>& x,
                  const std::vector<std::pair<Index, Index>>& coords) {
  using Array = typename TensorT<S>::Array;
  if (x.rank() != 3) throw ShapeError("gather: feature map must be [C,H,W]");
  const Index C = x.shape[0], H = x.shape[1], W = x.shape[2];
  const Index M = static_cast<Index>(coords.size());
  for (auto [r, c] : coords)
    if (r < 0 || r >= H || c < 0 || c >= W)
      throw ShapeError("gather: coordinate out of bounds");
  TensorT<S> out;
  out.shape = {M, C};
  out.data.resize(M * C);
  for (Index m = 0; m < M; ++m)
    for (Index c = 0; c < C; ++c)
      out.data[m * C + c] =
          x.data[(c * H + coords[static_cast<std::size_t>(m)].first) * W +
                 coords[static_cast<std::size_t>(m)].second];
  int xn = x.node;
  out.node = tape.add_node(
      out.shape, {xn}, [xn, coords, C, H, W, M](const Array& up, TapeT<S>& t) {
        if (xn < 0) return;
        Array g = Array::Zero(C * H * W);
        for (Index m = 0; m < M; ++m)
          for (Index c = 0; c < C; ++c)
            g[(c * H + coords[static_cast<std::size_t>(m)].first) * W +
              coords[static_cast<std::size_t>(m)].second] += up[m * C + c];
        t.accumulate(xn, g);
      });
  return out;
}

// Mean of X[:, cell] over a fixed set of feature-map cells -> [C].
template <typename S>
TensorT<S> pool_cells(TapeT<S>& tape, const TensorT<S>& x,
                      const std::vector<std::pair<Index, Index>>& cells) {
  using Array = typename TensorT<S>::Array;
  if (x.rank() != 3) throw ShapeError("pool_cells: feature map must be [C,H,W]");
  if (cells.empty()) throw ShapeError("pool_cells: empty cell set");
  const Index C = x.shape[0], H = x.shape[1], W = x.shape[2];
  const S inv = S(1) / static_cast<S>(cells.size());
  TensorT<S> out;
  out.shape = {C};
  out.data = Array::Zero(C);
  for (auto [r, c] : cells) {
    if (r < 0 || r >= H || c < 0 || c >= W)
      throw ShapeError("pool_cells: cell out of bounds");
    for (Index ch = 0; ch < C; ++ch) out.data[ch] += x.data[(ch * H + r) * W + c];
  }
  out.data *= inv;
  int xn = x.node;
  out.node = tape.add_node(
      out.shape, {xn}, [xn, cells, C, H, W, inv](const Array& up, TapeT<S>& t) {
        if (xn < 0) return;
        Array g = Array::Zero(C * H * W);
        for (auto [r, c] : cells)
          for (Index ch = 0; ch < C; ++ch) g[(ch * H + r) * W + c] += up[ch] * inv;
        t.accumulate(xn, g);
      });
  return out;
}

}  // namespace sadl
