#include "srg/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace srg {

namespace {
constexpr real kLayerNormEps = real(1e-5);
constexpr real kGeluC = real(0.7978845608028654);  // sqrt(2/pi)
constexpr real kGeluA = real(0.044715);

real sigmoid_stable(real x) {
  if (x >= 0) return real(1) / (real(1) + std::exp(-x));
  const real e = std::exp(x);
  return e / (real(1) + e);
}
}  // namespace

Tensor& Tape::ensure_grad(int id) {
  Node& n = nodes_[size_t(id)];
  if (n.grad.empty()) n.grad = Tensor(n.val().shape);
  return n.grad;
}

void Tape::add_grad(int id, const Tensor& g) {
  Node& n = nodes_[size_t(id)];
  if (!n.requires_grad) return;
  Tensor& dst = ensure_grad(id);
  for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
}

bool Tape::any_requires(const std::vector<int>& ids) const {
  for (int id : ids)
    if (nodes_[size_t(id)].requires_grad) return true;
  return false;
}

Var Tape::leaf(Parameter& p) {
  Node n;
  n.op = "leaf";
  n.extern_value = &p.value;
  n.requires_grad = p.trainable;
  n.param = &p;
  n.back = [](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Tensor& pg = self.param->grad;
    for (size_t i = 0; i < pg.data.size(); ++i) pg.data[i] += self.grad.data[i];
  };
  return wrap(push(std::move(n)));
}

Var Tape::constant(Tensor t) {
  Node n;
  n.op = "const";
  n.value = std::move(t);
  return wrap(push(std::move(n)));
}

Var Tape::constant_view(const Tensor* t) {
  Node n;
  n.op = "const";
  n.extern_value = t;
  return wrap(push(std::move(n)));
}

Var Tape::unary(const char* op, Var a, Tensor value, std::function<void(Tape&, int)> back) {
  Node n;
  n.op = op;
  n.inputs = {a.id};
  n.value = std::move(value);
  n.requires_grad = nodes_[size_t(a.id)].requires_grad;
  if (n.requires_grad) n.back = std::move(back);
  return wrap(push(std::move(n)));
}

Var Tape::add(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) fail_shape("add", av, bv);
  Tensor out = av;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
  Node n;
  n.op = "add";
  n.inputs = {a.id, b.id};
  n.value = std::move(out);
  n.requires_grad = any_requires(n.inputs);
  n.back = [](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    t.add_grad(self.inputs[0], self.grad);
    t.add_grad(self.inputs[1], self.grad);
  };
  return wrap(push(std::move(n)));
}

Var Tape::add_rowvec(Var a, Var row) {
  const Tensor& av = val(a);
  const Tensor& rv = val(row);
  Tensor out = add_rowvec_val(av, rv);
  Node n;
  n.op = "add_rowvec";
  n.inputs = {a.id, row.id};
  n.value = std::move(out);
  n.requires_grad = any_requires(n.inputs);
  n.back = [](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    t.add_grad(self.inputs[0], self.grad);
    Node& rn = t.nodes_[size_t(self.inputs[1])];
    if (rn.requires_grad) {
      Tensor& rg = t.ensure_grad(self.inputs[1]);
      const int m = self.grad.rows(), c = self.grad.cols();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) rg.data[size_t(j)] += self.grad.at(i, j);
    }
  };
  return wrap(push(std::move(n)));
}

Var Tape::sub(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) fail_shape("sub", av, bv);
  Tensor out = av;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
  Node n;
  n.op = "sub";
  n.inputs = {a.id, b.id};
  n.value = std::move(out);
  n.requires_grad = any_requires(n.inputs);
  n.back = [](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    t.add_grad(self.inputs[0], self.grad);
    Node& bn = t.nodes_[size_t(self.inputs[1])];
    if (bn.requires_grad) {
      Tensor& bg = t.ensure_grad(self.inputs[1]);
      for (size_t i = 0; i < bg.data.size(); ++i) bg.data[i] -= self.grad.data[i];
    }
  };
  return wrap(push(std::move(n)));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) fail_shape("mul", av, bv);
  Tensor out = av;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
  Node n;
  n.op = "mul";
  n.inputs = {a.id, b.id};
  n.value = std::move(out);
  n.requires_grad = any_requires(n.inputs);
  n.back = [](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    const Tensor& av2 = t.nodes_[size_t(self.inputs[0])].val();
    const Tensor& bv2 = t.nodes_[size_t(self.inputs[1])].val();
    if (t.nodes_[size_t(self.inputs[0])].requires_grad) {
      Tensor& ag = t.ensure_grad(self.inputs[0]);
      for (size_t i = 0; i < ag.data.size(); ++i) ag.data[i] += self.grad.data[i] * bv2.data[i];
    }
    if (t.nodes_[size_t(self.inputs[1])].requires_grad) {
      Tensor& bg = t.ensure_grad(self.inputs[1]);
      for (size_t i = 0; i < bg.data.size(); ++i) bg.data[i] += self.grad.data[i] * av2.data[i];
    }
  };
  return wrap(push(std::move(n)));
}

Var Tape::scale(Var a, real c) {
  Tensor out = val(a);
  for (auto& x : out.data) x *= c;
  return unary("scale", a, std::move(out), [c](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Node& an = t.nodes_[size_t(self.inputs[0])];
    if (!an.requires_grad) return;
    Tensor& ag = t.ensure_grad(self.inputs[0]);
    for (size_t i = 0; i < ag.data.size(); ++i) ag.data[i] += c * self.grad.data[i];
  });
}

Var Tape::transpose(Var a) {
  const Tensor& av = val(a);
  const int m = av.rows(), c = av.cols();
  Tensor out(c, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  return unary("transpose", a, std::move(out), [](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Node& an = t.nodes_[size_t(self.inputs[0])];
    if (!an.requires_grad) return;
    Tensor& ag = t.ensure_grad(self.inputs[0]);
    const int m2 = ag.rows(), c2 = ag.cols();
    for (int i = 0; i < m2; ++i)
      for (int j = 0; j < c2; ++j) ag.at(i, j) += self.grad.at(j, i);
  });
}

Var Tape::reshape(Var a, std::vector<int> shape) {
  const Tensor& av = val(a);
  if (Tensor::numel_of(shape) != av.numel())
    fail_numeric("reshape: numel mismatch " + av.shape_str());
  Tensor out = av;
  out.shape = std::move(shape);
  return unary("reshape", a, std::move(out), [](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Node& an = t.nodes_[size_t(self.inputs[0])];
    if (!an.requires_grad) return;
    Tensor& ag = t.ensure_grad(self.inputs[0]);
    for (size_t i = 0; i < ag.data.size(); ++i) ag.data[i] += self.grad.data[i];
  });
}

Var Tape::concat(const std::vector<Var>& xs, int axis) {
  if (xs.empty()) fail_numeric("concat: no inputs");
  const int rank = val(xs[0]).rank();
  Node n;
  n.op = "concat";
  for (Var v : xs) n.inputs.push_back(v.id);
  if (rank == 1 || (rank == 2 && axis == 0)) {
    // stack rows (or elements for rank 1)
    int total_rows = 0;
    const int c = rank == 1 ? 1 : val(xs[0]).cols();
    for (Var v : xs) {
      const Tensor& t = val(v);
      if (rank == 2 && t.cols() != c) fail_shape("concat", val(xs[0]), t);
      total_rows += rank == 1 ? int(t.numel()) : t.rows();
    }
    Tensor out(rank == 1 ? std::vector<int>{total_rows} : std::vector<int>{total_rows, c});
    size_t off = 0;
    for (Var v : xs) {
      const Tensor& t = val(v);
      std::copy(t.data.begin(), t.data.end(), out.data.begin() + long(off));
      off += t.data.size();
    }
    n.value = std::move(out);
    n.requires_grad = any_requires(n.inputs);
    n.back = [](Tape& t, int id) {
      Node& self = t.nodes_[size_t(id)];
      size_t off2 = 0;
      for (int in : self.inputs) {
        Node& an = t.nodes_[size_t(in)];
        const size_t sz = an.val().data.size();
        if (an.requires_grad) {
          Tensor& ag = t.ensure_grad(in);
          for (size_t i = 0; i < sz; ++i) ag.data[i] += self.grad.data[off2 + i];
        }
        off2 += sz;
      }
    };
  } else if (rank == 2 && axis == 1) {
    const int m = val(xs[0]).rows();
    int total_cols = 0;
    for (Var v : xs) {
      const Tensor& t = val(v);
      if (t.rows() != m) fail_shape("concat", val(xs[0]), t);
      total_cols += t.cols();
    }
    Tensor out(m, total_cols);
    int coff = 0;
    for (Var v : xs) {
      const Tensor& t = val(v);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < t.cols(); ++j) out.at(i, coff + j) = t.at(i, j);
      coff += t.cols();
    }
    n.value = std::move(out);
    n.requires_grad = any_requires(n.inputs);
    n.back = [](Tape& t, int id) {
      Node& self = t.nodes_[size_t(id)];
      const int m2 = self.grad.rows();
      int coff2 = 0;
      for (int in : self.inputs) {
        Node& an = t.nodes_[size_t(in)];
        const int c2 = an.val().cols();
        if (an.requires_grad) {
          Tensor& ag = t.ensure_grad(in);
          for (int i = 0; i < m2; ++i)
            for (int j = 0; j < c2; ++j) ag.at(i, j) += self.grad.at(i, coff2 + j);
        }
        coff2 += c2;
      }
    };
  } else {
    fail_numeric("concat: unsupported axis " + std::to_string(axis));
  }
  return wrap(push(std::move(n)));
}

Var Tape::slice_rows(Var a, int r0, int r1) {
  const Tensor& av = val(a);
  if (r0 < 0 || r1 > av.rows() || r0 >= r1)
    fail_numeric("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) + ") for " + av.shape_str());
  const int c = av.cols();
  Tensor out(r1 - r0, c);
  std::copy(av.data.begin() + size_t(r0) * c, av.data.begin() + size_t(r1) * c, out.data.begin());
  return unary("slice_rows", a, std::move(out), [r0](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Node& an = t.nodes_[size_t(self.inputs[0])];
    if (!an.requires_grad) return;
    Tensor& ag = t.ensure_grad(self.inputs[0]);
    const int c2 = ag.cols();
    for (int i = 0; i < self.grad.rows(); ++i)
      for (int j = 0; j < c2; ++j) ag.at(r0 + i, j) += self.grad.at(i, j);
  });
}

Var Tape::relu(Var a) {
  Tensor out = relu_val(val(a));
  return unary("relu", a, std::move(out), [](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Node& an = t.nodes_[size_t(self.inputs[0])];
    if (!an.requires_grad) return;
    const Tensor& x = an.val();
    Tensor& ag = t.ensure_grad(self.inputs[0]);
    for (size_t i = 0; i < ag.data.size(); ++i)
      if (x.data[i] > real(0)) ag.data[i] += self.grad.data[i];
  });
}

Var Tape::gelu(Var a) {
  const Tensor& x = val(a);
  Tensor out = x;
  for (auto& v : out.data) {
    const real u = kGeluC * (v + kGeluA * v * v * v);
    v = real(0.5) * v * (real(1) + std::tanh(u));
  }
  return unary("gelu", a, std::move(out), [](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Node& an = t.nodes_[size_t(self.inputs[0])];
    if (!an.requires_grad) return;
    const Tensor& x2 = an.val();
    Tensor& ag = t.ensure_grad(self.inputs[0]);
    for (size_t i = 0; i < ag.data.size(); ++i) {
      const real v = x2.data[i];
      const real u = kGeluC * (v + kGeluA * v * v * v);
      const real th = std::tanh(u);
      const real d = real(0.5) * (real(1) + th) +
                     real(0.5) * v * (real(1) - th * th) * kGeluC * (real(1) + real(3) * kGeluA * v * v);
      ag.data[i] += self.grad.data[i] * d;
    }
  });
}

Var Tape::layer_norm(Var x, Var gain, Var bias) {
  const Tensor& xv = val(x);
  const Tensor& gv = val(gain);
  const Tensor& bv = val(bias);
  const int m = xv.rows(), c = xv.cols();
  if (gv.numel() != c || bv.numel() != c) fail_shape("layer_norm", xv, gv);
  Tensor out(m, c);
  Tensor yhat(m, c);  // normalized rows, saved for backward
  Tensor istd(std::vector<int>{m});
  for (int i = 0; i < m; ++i) {
    real mu = 0;
    for (int j = 0; j < c; ++j) mu += xv.at(i, j);
    mu /= c;
    real var = 0;
    for (int j = 0; j < c; ++j) {
      const real d = xv.at(i, j) - mu;
      var += d * d;
    }
    var /= c;
    const real is = real(1) / std::sqrt(var + kLayerNormEps);
    istd.data[size_t(i)] = is;
    for (int j = 0; j < c; ++j) {
      const real y = (xv.at(i, j) - mu) * is;
      yhat.at(i, j) = y;
      out.at(i, j) = y * gv.data[size_t(j)] + bv.data[size_t(j)];
    }
  }
  Node n;
  n.op = "layer_norm";
  n.inputs = {x.id, gain.id, bias.id};
  n.value = std::move(out);
  n.requires_grad = any_requires(n.inputs);
  auto yh = std::make_shared<Tensor>(std::move(yhat));
  auto is = std::make_shared<Tensor>(std::move(istd));
  n.back = [yh, is](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    const Tensor& g = self.grad;
    const int m2 = g.rows(), c2 = g.cols();
    Node& xn = t.nodes_[size_t(self.inputs[0])];
    Node& gn = t.nodes_[size_t(self.inputs[1])];
    Node& bn = t.nodes_[size_t(self.inputs[2])];
    const Tensor& gv2 = gn.val();
    if (gn.requires_grad) {
      Tensor& gg = t.ensure_grad(self.inputs[1]);
      for (int i = 0; i < m2; ++i)
        for (int j = 0; j < c2; ++j) gg.data[size_t(j)] += g.at(i, j) * yh->at(i, j);
    }
    if (bn.requires_grad) {
      Tensor& bg = t.ensure_grad(self.inputs[2]);
      for (int i = 0; i < m2; ++i)
        for (int j = 0; j < c2; ++j) bg.data[size_t(j)] += g.at(i, j);
    }
    if (xn.requires_grad) {
      Tensor& xg = t.ensure_grad(self.inputs[0]);
      for (int i = 0; i < m2; ++i) {
        real mean_dy = 0, mean_dyy = 0;
        for (int j = 0; j < c2; ++j) {
          const real dy = g.at(i, j) * gv2.data[size_t(j)];
          mean_dy += dy;
          mean_dyy += dy * yh->at(i, j);
        }
        mean_dy /= c2;
        mean_dyy /= c2;
        const real is2 = is->data[size_t(i)];
        for (int j = 0; j < c2; ++j) {
          const real dy = g.at(i, j) * gv2.data[size_t(j)];
          xg.at(i, j) += is2 * (dy - mean_dy - yh->at(i, j) * mean_dyy);
        }
      }
    }
  };
  return wrap(push(std::move(n)));
}

Var Tape::embedding(Var table, std::vector<int> ids) {
  const Tensor& tv = val(table);
  const int v = tv.rows(), d = tv.cols();
  for (int id : ids)
    if (id < 0 || id >= v) fail_numeric("embedding: index " + std::to_string(id) + " out of range [0," + std::to_string(v) + ")");
  Tensor out(int(ids.size()), d);
  for (size_t r = 0; r < ids.size(); ++r)
    std::copy(tv.data.begin() + size_t(ids[r]) * d, tv.data.begin() + size_t(ids[r] + 1) * d,
              out.data.begin() + r * size_t(d));
  return unary("embedding", table, std::move(out), [ids = std::move(ids)](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Node& tn = t.nodes_[size_t(self.inputs[0])];
    if (!tn.requires_grad) return;
    Tensor& tg = t.ensure_grad(self.inputs[0]);
    const int d2 = tg.cols();
    for (size_t r = 0; r < ids.size(); ++r)
      for (int j = 0; j < d2; ++j) tg.at(ids[r], j) += self.grad.at(int(r), j);
  });
}

Var Tape::dropout(Var a, real rate, Rng& rng) {
  if (rate <= real(0)) return a;
  if (rate >= real(1)) fail_numeric("dropout: rate must be < 1");
  const Tensor& av = val(a);
  Tensor mask(av.shape);
  const real keep = real(1) - rate;
  for (auto& m : mask.data) m = (rng.uniform() >= rate) ? real(1) / keep : real(0);
  Tensor out = av;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
  auto mk = std::make_shared<Tensor>(std::move(mask));
  return unary("dropout", a, std::move(out), [mk](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Node& an = t.nodes_[size_t(self.inputs[0])];
    if (!an.requires_grad) return;
    Tensor& ag = t.ensure_grad(self.inputs[0]);
    for (size_t i = 0; i < ag.data.size(); ++i) ag.data[i] += self.grad.data[i] * mk->data[i];
  });
}

Var Tape::sum_all(Var a) {
  const Tensor& av = val(a);
  real s = 0;
  for (real x : av.data) s += x;
  return unary("sum_all", a, Tensor::scalar(s), [](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Node& an = t.nodes_[size_t(self.inputs[0])];
    if (!an.requires_grad) return;
    Tensor& ag = t.ensure_grad(self.inputs[0]);
    const real g = self.grad.data[0];
    for (auto& x : ag.data) x += g;
  });
}

Var Tape::mean_all(Var a) {
  const Tensor& av = val(a);
  real s = 0;
  for (real x : av.data) s += x;
  const real inv = real(1) / real(av.numel());
  return unary("mean_all", a, Tensor::scalar(s * inv), [inv](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Node& an = t.nodes_[size_t(self.inputs[0])];
    if (!an.requires_grad) return;
    Tensor& ag = t.ensure_grad(self.inputs[0]);
    const real g = self.grad.data[0] * inv;
    for (auto& x : ag.data) x += g;
  });
}

Var Tape::softmax_rows(Var a) {
  Tensor out = softmax_rows_val(val(a));
  return unary("softmax_rows", a, std::move(out), [](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Node& an = t.nodes_[size_t(self.inputs[0])];
    if (!an.requires_grad) return;
    const Tensor& y = self.value;
    const Tensor& g = self.grad;
    Tensor& ag = t.ensure_grad(self.inputs[0]);
    const int m = y.rows(), c = y.cols();
    for (int i = 0; i < m; ++i) {
      real dot = 0;
      for (int j = 0; j < c; ++j) dot += g.at(i, j) * y.at(i, j);
      for (int j = 0; j < c; ++j) ag.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
    }
  });
}

Var Tape::logsigmoid(Var a) {
  const Tensor& av = val(a);
  Tensor out = av;
  for (auto& x : out.data) x = x >= real(0) ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  return unary("logsigmoid", a, std::move(out), [](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Node& an = t.nodes_[size_t(self.inputs[0])];
    if (!an.requires_grad) return;
    const Tensor& x = an.val();
    Tensor& ag = t.ensure_grad(self.inputs[0]);
    for (size_t i = 0; i < ag.data.size(); ++i)
      ag.data[i] += self.grad.data[i] * (real(1) - sigmoid_stable(x.data[i]));
  });
}

Var Tape::matmul(Var a, Var b) {
  Tensor out = mm(val(a), val(b));
  Node n;
  n.op = "matmul";
  n.inputs = {a.id, b.id};
  n.value = std::move(out);
  n.requires_grad = any_requires(n.inputs);
  n.back = [](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Node& an = t.nodes_[size_t(self.inputs[0])];
    Node& bn = t.nodes_[size_t(self.inputs[1])];
    if (an.requires_grad) mm_nt_into(self.grad, bn.val(), t.ensure_grad(self.inputs[0]), true);
    if (bn.requires_grad) mm_tn_into(an.val(), self.grad, t.ensure_grad(self.inputs[1]), true);
  };
  return wrap(push(std::move(n)));
}

Var Tape::cross_entropy(Var logits, std::vector<int> targets) {
  const Tensor& lv = val(logits);
  const int m = lv.rows(), c = lv.cols();
  if (int(targets.size()) != m) fail_numeric("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(m) + " rows");
  for (int t : targets)
    if (t < 0 || t >= c) fail_numeric("cross_entropy: target " + std::to_string(t) + " out of range [0," + std::to_string(c) + ")");
  Tensor probs = softmax_rows_val(lv);
  real loss = 0;
  for (int i = 0; i < m; ++i) {
    const real* xi = lv.data.data() + size_t(i) * c;
    real mx = xi[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
    real lse = 0;
    for (int j = 0; j < c; ++j) lse += std::exp(xi[j] - mx);
    loss += mx + std::log(lse) - xi[targets[size_t(i)]];
  }
  loss /= m;
  auto pr = std::make_shared<Tensor>(std::move(probs));
  return unary("cross_entropy", logits, Tensor::scalar(loss),
               [pr, targets = std::move(targets)](Tape& t, int id) {
                 Node& self = t.nodes_[size_t(id)];
                 Node& ln = t.nodes_[size_t(self.inputs[0])];
                 if (!ln.requires_grad) return;
                 Tensor& lg = t.ensure_grad(self.inputs[0]);
                 const int m2 = lg.rows(), c2 = lg.cols();
                 const real g = self.grad.data[0] / m2;
                 for (int i = 0; i < m2; ++i)
                   for (int j = 0; j < c2; ++j)
                     lg.at(i, j) += g * (pr->at(i, j) - (targets[size_t(i)] == j ? real(1) : real(0)));
               });
}

Var Tape::mse(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  if (!av.same_shape(bv)) fail_shape("mse", av, bv);
  real s = 0;
  for (size_t i = 0; i < av.data.size(); ++i) {
    const real d = av.data[i] - bv.data[i];
    s += d * d;
  }
  const real inv = real(1) / real(av.numel());
  Node n;
  n.op = "mse";
  n.inputs = {a.id, b.id};
  n.value = Tensor::scalar(s * inv);
  n.requires_grad = any_requires(n.inputs);
  n.back = [inv](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Node& an = t.nodes_[size_t(self.inputs[0])];
    Node& bn = t.nodes_[size_t(self.inputs[1])];
    const Tensor& av2 = an.val();
    const Tensor& bv2 = bn.val();
    const real g = real(2) * inv * self.grad.data[0];
    if (an.requires_grad) {
      Tensor& ag = t.ensure_grad(self.inputs[0]);
      for (size_t i = 0; i < ag.data.size(); ++i) ag.data[i] += g * (av2.data[i] - bv2.data[i]);
    }
    if (bn.requires_grad) {
      Tensor& bg = t.ensure_grad(self.inputs[1]);
      for (size_t i = 0; i < bg.data.size(); ++i) bg.data[i] -= g * (av2.data[i] - bv2.data[i]);
    }
  };
  return wrap(push(std::move(n)));
}

Var Tape::colmax(Var a) {
  std::vector<int> argmax;
  Tensor out = colmax_val(val(a), &argmax);
  return unary("colmax", a, std::move(out), [argmax = std::move(argmax)](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Node& an = t.nodes_[size_t(self.inputs[0])];
    if (!an.requires_grad) return;
    Tensor& ag = t.ensure_grad(self.inputs[0]);
    for (int j = 0; j < int(argmax.size()); ++j) ag.at(argmax[size_t(j)], j) += self.grad.data[size_t(j)];
  });
}

Var Tape::pair_scores(Var a, Var b) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  const int nq = av.rows(), k = av.cols();
  if (bv.rows() != nq * nq || bv.cols() != k) fail_shape("pair_scores", av, bv);
  Tensor out(nq, nq);
  for (int i = 0; i < nq; ++i) {
    const real* ai = av.data.data() + size_t(i) * k;
    for (int j = 0; j < nq; ++j) {
      const real* bij = bv.data.data() + (size_t(i) * nq + j) * k;
      real s = 0;
      for (int l = 0; l < k; ++l) s += ai[l] * bij[l];
      out.at(i, j) = s;
    }
  }
  Node n;
  n.op = "pair_scores";
  n.inputs = {a.id, b.id};
  n.value = std::move(out);
  n.requires_grad = any_requires(n.inputs);
  n.back = [](Tape& t, int id) {
    Node& self = t.nodes_[size_t(id)];
    Node& an = t.nodes_[size_t(self.inputs[0])];
    Node& bn = t.nodes_[size_t(self.inputs[1])];
    const Tensor& av2 = an.val();
    const Tensor& bv2 = bn.val();
    const int nq2 = av2.rows(), k2 = av2.cols();
    if (an.requires_grad) {
      Tensor& ag = t.ensure_grad(self.inputs[0]);
      for (int i = 0; i < nq2; ++i)
        for (int j = 0; j < nq2; ++j) {
          const real g = self.grad.at(i, j);
          const real* bij = bv2.data.data() + (size_t(i) * nq2 + j) * k2;
          real* agi = ag.data.data() + size_t(i) * k2;
          for (int l = 0; l < k2; ++l) agi[l] += g * bij[l];
        }
    }
    if (bn.requires_grad) {
      Tensor& bg = t.ensure_grad(self.inputs[1]);
      for (int i = 0; i < nq2; ++i) {
        const real* ai = av2.data.data() + size_t(i) * k2;
        for (int j = 0; j < nq2; ++j) {
          const real g = self.grad.at(i, j);
          real* bij = bg.data.data() + (size_t(i) * nq2 + j) * k2;
          for (int l = 0; l < k2; ++l) bij[l] += g * ai[l];
        }
      }
    }
  };
  return wrap(push(std::move(n)));
}

void Tape::backward(Var loss) {
  if (!loss.valid() || loss.tape != this) fail_numeric("backward: loss is not on this tape");
  if (val(loss).numel() != 1) fail_numeric("backward: loss must be scalar, got " + val(loss).shape_str());
  // Node grads are per-sweep; parameter grads accumulate across sweeps.
  for (auto& n : nodes_) n.grad = Tensor();
  ensure_grad(loss.id).data[0] = real(1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[size_t(id)];
    if (!n.requires_grad || n.grad.empty() || !n.back) continue;
    n.back(*this, id);
  }
}

}  // namespace srg
