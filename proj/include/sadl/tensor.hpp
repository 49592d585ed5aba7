#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "sadl/errors.hpp"
#include "sadl/rng.hpp"

namespace sadl {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense n-dimensional array with row-major flat storage and an optional
// tape-node identity. node < 0 marks a constant (no gradient flow).
template <typename S>
struct TensorT {
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;

  Shape shape;
  Array data;
  int node = -1;

  TensorT() = default;
  TensorT(Shape sh, Array d) : shape(std::move(sh)), data(std::move(d)) {
    if (data.size() != numel(shape))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  Index size() const { return data.size(); }
  Index rank() const { return static_cast<Index>(shape.size()); }
  Index dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  S& at(Index i) { return data[i]; }
  S at(Index i) const { return data[i]; }

  static TensorT zeros(Shape sh) {
    Index n = numel(sh);
    return TensorT(std::move(sh), Array::Zero(n));
  }
  static TensorT full(Shape sh, S value) {
    Index n = numel(sh);
    return TensorT(std::move(sh), Array::Constant(n, value));
  }
  static TensorT ones(Shape sh) { return full(std::move(sh), S(1)); }
  static TensorT scalar(S value) {
    TensorT t;
    t.shape = {};
    t.data = Array::Constant(1, value);
    return t;
  }
  static TensorT from(Shape sh, std::initializer_list<S> values) {
    Array d(static_cast<Index>(values.size()));
    Index i = 0;
    for (S v : values) d[i++] = v;
    return TensorT(std::move(sh), std::move(d));
  }
  static TensorT randn(Rng& rng, Shape sh, S sigma) {
    Index n = numel(sh);
    Array d(n);
    for (Index i = 0; i < n; ++i) d[i] = static_cast<S>(rng.normal()) * sigma;
    return TensorT(std::move(sh), std::move(d));
  }
  // Identity matrix, handy for tests.
  static TensorT identity(Index n) {
    TensorT t = zeros({n, n});
    for (Index i = 0; i < n; ++i) t.data[i * n + i] = S(1);
    return t;
  }
};

using Tensor = TensorT<double>;

// True when shapes are identical.
inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// True when b may broadcast over the trailing axes of a: b is scalar or
// b's shape equals a trailing suffix of a's shape.
inline bool suffix_broadcastable(const Shape& a, const Shape& b) {
  if (numel(b) == 1) return true;
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

}  // namespace sadl
