#pragma once

#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

#include "srg/common.hpp"

namespace srg {

// Dense row-major tensor of rank 1 or 2. All model math is rank-2; rank-1 is
// used for targets and small vectors.
struct Tensor {
  std::vector<int> shape;
  std::vector<real> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(size_t(numel_of(shape)), real(0)) {}
  Tensor(int r, int c) : Tensor(std::vector<int>{r, c}) {}

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, real v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }
  static Tensor vec(std::initializer_list<real> xs) {
    Tensor t(std::vector<int>{int(xs.size())});
    int i = 0;
    for (real x : xs) t.data[size_t(i++)] = x;
    return t;
  }
  static Tensor matrix(int r, int c, std::initializer_list<real> xs) {
    Tensor t(r, c);
    int i = 0;
    for (real x : xs) t.data[size_t(i++)] = x;
    return t;
  }
  static Tensor scalar(real v) { return full({1, 1}, v); }

  int rank() const { return int(shape.size()); }
  int64_t numel() const { return int64_t(data.size()); }
  bool empty() const { return data.empty(); }

  int rows() const { return rank() == 2 ? shape[0] : 1; }
  int cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 0); }

  real& at(int i, int j) { return data[size_t(i) * size_t(cols()) + size_t(j)]; }
  real at(int i, int j) const { return data[size_t(i) * size_t(cols()) + size_t(j)]; }
  real& operator[](size_t i) { return data[i]; }
  real operator[](size_t i) const { return data[i]; }

  real item() const {
    if (numel() != 1) fail_numeric("item() on tensor with numel " + std::to_string(numel()));
    return data[0];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (real x : data)
      if (!std::isfinite(x)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

[[noreturn]] void fail_shape(const char* op, const Tensor& a, const Tensor& b);

// Raw kernels shared by the tape ops and the no-gradient forward paths.
// The *_into variants accumulate when acc is true.
void mm_into(const Tensor& a, const Tensor& b, Tensor& out, bool acc);     // a.b
void mm_nt_into(const Tensor& a, const Tensor& b, Tensor& out, bool acc);  // a.b^T
void mm_tn_into(const Tensor& a, const Tensor& b, Tensor& out, bool acc);  // a^T.b
Tensor mm(const Tensor& a, const Tensor& b);

Tensor add_rowvec_val(const Tensor& a, const Tensor& row);
Tensor relu_val(const Tensor& a);
Tensor colmax_val(const Tensor& a, std::vector<int>* argmax = nullptr);
Tensor softmax_rows_val(const Tensor& a);

}  // namespace srg
