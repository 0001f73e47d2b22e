#include "srg/tensor.hpp"

#include <algorithm>

namespace srg {

void fail_shape(const char* op, const Tensor& a, const Tensor& b) {
  fail_numeric(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

void mm_into(const Tensor& a, const Tensor& b, Tensor& out, bool acc) {
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) fail_shape("matmul", a, b);
  if (out.rows() != m || out.cols() != n) out = Tensor(m, n);
  const real* A = a.data.data();
  const real* B = b.data.data();
  real* C = out.data.data();
  if (!acc) std::fill(out.data.begin(), out.data.end(), real(0));
  for (int i = 0; i < m; ++i) {
    const real* ai = A + size_t(i) * k;
    real* ci = C + size_t(i) * n;
    for (int l = 0; l < k; ++l) {
      const real v = ai[l];
      if (v == real(0)) continue;
      const real* bl = B + size_t(l) * n;
      for (int j = 0; j < n; ++j) ci[j] += v * bl[j];
    }
  }
}

void mm_nt_into(const Tensor& a, const Tensor& b, Tensor& out, bool acc) {
  const int m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) fail_shape("matmul_nt", a, b);
  if (out.rows() != m || out.cols() != n) out = Tensor(m, n);
  const real* A = a.data.data();
  const real* B = b.data.data();
  real* C = out.data.data();
  for (int i = 0; i < m; ++i) {
    const real* ai = A + size_t(i) * k;
    real* ci = C + size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      const real* bj = B + size_t(j) * k;
      real s = 0;
      for (int l = 0; l < k; ++l) s += ai[l] * bj[l];
      ci[j] = acc ? ci[j] + s : s;
    }
  }
}

void mm_tn_into(const Tensor& a, const Tensor& b, Tensor& out, bool acc) {
  const int k = a.rows(), m = a.cols(), n = b.cols();
  if (b.rows() != k) fail_shape("matmul_tn", a, b);
  if (out.rows() != m || out.cols() != n) out = Tensor(m, n);
  const real* A = a.data.data();
  const real* B = b.data.data();
  real* C = out.data.data();
  if (!acc) std::fill(out.data.begin(), out.data.end(), real(0));
  for (int l = 0; l < k; ++l) {
    const real* al = A + size_t(l) * m;
    const real* bl = B + size_t(l) * n;
    for (int i = 0; i < m; ++i) {
      const real v = al[i];
      if (v == real(0)) continue;
      real* ci = C + size_t(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += v * bl[j];
    }
  }
}

Tensor mm(const Tensor& a, const Tensor& b) {
  Tensor out;
  mm_into(a, b, out, false);
  return out;
}

Tensor add_rowvec_val(const Tensor& a, const Tensor& row) {
  if (row.numel() != a.cols()) fail_shape("add_rowvec", a, row);
  Tensor out = a;
  const int n = a.cols();
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < n; ++j) out.data[size_t(i) * n + j] += row.data[size_t(j)];
  return out;
}

Tensor relu_val(const Tensor& a) {
  Tensor out = a;
  for (auto& x : out.data) x = x > real(0) ? x : real(0);
  return out;
}

Tensor colmax_val(const Tensor& a, std::vector<int>* argmax) {
  const int m = a.rows(), n = a.cols();
  Tensor out(1, n);
  std::vector<int> arg(size_t(n), 0);
  for (int j = 0; j < n; ++j) out.data[size_t(j)] = a.at(0, j);
  for (int i = 1; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const real v = a.at(i, j);
      if (v > out.data[size_t(j)]) {
        out.data[size_t(j)] = v;
        arg[size_t(j)] = i;
      }
    }
  if (argmax) *argmax = std::move(arg);
  return out;
}

Tensor softmax_rows_val(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  Tensor out(m, n);
  for (int i = 0; i < m; ++i) {
    const real* xi = a.data.data() + size_t(i) * n;
    real* yi = out.data.data() + size_t(i) * n;
    real mx = xi[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    real sum = 0;
    for (int j = 0; j < n; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      sum += yi[j];
    }
    const real inv = real(1) / sum;
    for (int j = 0; j < n; ++j) yi[j] *= inv;
  }
  return out;
}

}  // namespace srg
