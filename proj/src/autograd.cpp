#include "gimtp/autograd.hpp"

#include "gimtp/errors.hpp"
#include "gimtp/parameters.hpp"

#include <algorithm>
#include <cmath>

namespace gimtp::ad {

namespace {

Shape strip_leading_ones(const Shape& s) {
  std::size_t i = 0;
  while (i < s.size() && s[i] == 1) ++i;
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(i), s.end());
}

bool is_suffix(const Shape& small, const Shape& large) {
  if (small.size() > large.size()) return false;
  return std::equal(small.rbegin(), small.rend(), large.rbegin());
}

// Resolved broadcasting plan for a binary elementwise op.
struct Broadcast {
  Shape out;
  std::size_t period_a;  // a repeats with this period across the output
  std::size_t period_b;
};

Broadcast plan_broadcast(const Shape& sa, const Shape& sb, const char* op) {
  const std::size_t na = shape_size(sa);
  const std::size_t nb = shape_size(sb);
  if (sa == sb) return {sa, na, nb};
  if (na >= nb && is_suffix(strip_leading_ones(sb), sa)) return {sa, na, nb};
  if (nb > na && is_suffix(strip_leading_ones(sa), sb)) return {sb, na, nb};
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(sa) + " and " +
                       shape_string(sb));
}

void accumulate_reduced(Tensor& target, const Tensor& source) {
  const std::size_t period = target.size();
  double* t = target.raw();
  const double* s = source.raw();
  for (std::size_t i = 0; i < source.size(); ++i) t[i % period] += s[i];
}

void accumulate(Tensor& target, const Tensor& source) {
  double* t = target.raw();
  const double* s = source.raw();
  for (std::size_t i = 0; i < source.size(); ++i) t[i] += s[i];
}

// Splits `shape` around `axis` into outer * dim * inner.
struct AxisSplit {
  std::size_t outer = 1, dim = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.dim = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <class Forward, class Derivative>
Var unary(Var a, Forward f, Derivative df) {
  Tape& tape = *a.tape();
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const int ia = a.id();
  const Var parents[] = {a};
  return tape.record(std::move(y), parents, [ia, df](Tape& t, int self) {
    const Tensor& g = t.grad_buffer(self);
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(const ParameterStore& store, std::size_t index) {
  if (store_ && store_ != &store) {
    throw ContractError("a tape can only bind parameters from one store");
  }
  store_ = &store;
  if (param_nodes_.size() < store.size()) param_nodes_.resize(store.size(), -1);
  if (param_nodes_[index] >= 0) return Var(this, param_nodes_[index]);
  Node n;
  n.external = &store[index].value;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  param_nodes_[index] = id;
  bound_.emplace_back(index, id);
  return Var(this, id);
}

const Tensor& Tape::value(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.external ? *n.external : n.value;
}

const Tensor& Tape::grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

Tensor& Tape::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0 && shape_size(value(id).shape()) != 0) {
    n.grad = Tensor(value(id).shape());
  } else if (n.grad.shape() != value(id).shape()) {
    n.grad = Tensor(value(id).shape());
  }
  return n.grad;
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    if (p.tape() != this) throw ContractError("operands recorded on different tapes");
    if (nodes_[static_cast<std::size_t>(p.id())].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("loss was recorded on a different tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(loss.value().shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id())[0] = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
    n.backward(*this, id);
  }
}

// ---------------------------------------------------------------------------
// Elementwise binary ops

Var add(Var a, Var b) {
  const Broadcast bc = plan_broadcast(a.shape(), b.shape(), "add");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(bc.out);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i % bc.period_a] + y[i % bc.period_b];
  }
  const int ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return a.tape()->record(std::move(out), parents, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) accumulate_reduced(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) accumulate_reduced(t.grad_buffer(ib), g);
  });
}

Var sub(Var a, Var b) {
  const Broadcast bc = plan_broadcast(a.shape(), b.shape(), "sub");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(bc.out);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i % bc.period_a] - y[i % bc.period_b];
  }
  const int ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return a.tape()->record(std::move(out), parents, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) accumulate_reduced(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      const std::size_t period = gb.size();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % period] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  const Broadcast bc = plan_broadcast(a.shape(), b.shape(), "mul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(bc.out);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i % bc.period_a] * y[i % bc.period_b];
  }
  const int ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return a.tape()->record(std::move(out), parents, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.grad_buffer(self);
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(ib);
    const std::size_t pa = xv.size(), pb = yv.size();
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i % pa] += g[i] * yv[i % pb];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % pb] += g[i] * xv[i % pa];
    }
  });
}

Var scale(Var a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(
      a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Matrix products

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(x.shape()) + " by " +
                         shape_string(y.shape()));
  }
  Tensor out({x.dim(0), y.dim(1)});
  out.as_matrix().noalias() = x.as_matrix() * y.as_matrix();
  const int ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return a.tape()->record(std::move(out), parents, [ia, ib](Tape& t, int self) {
    const auto g = t.grad_buffer(self).as_matrix();
    if (t.requires_grad(ia)) {
      t.grad_buffer(ia).as_matrix().noalias() += g * t.value(ib).as_matrix().transpose();
    }
    if (t.requires_grad(ib)) {
      t.grad_buffer(ib).as_matrix().noalias() += t.value(ia).as_matrix().transpose() * g;
    }
  });
}

Var bmm(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool a_batched = x.rank() == 3;
  const bool b_batched = y.rank() == 3;
  const bool ranks_ok = (x.rank() == 2 || a_batched) && (y.rank() == 2 || b_batched);
  if (!ranks_ok || !(a_batched || b_batched)) {
    throw DimensionError("bmm: expected 3-D operands, got " + shape_string(x.shape()) + " and " +
                         shape_string(y.shape()));
  }
  const std::size_t batch = a_batched ? x.dim(0) : y.dim(0);
  const std::size_t m = x.dim(x.rank() - 2), k = x.dim(x.rank() - 1);
  const std::size_t k2 = y.dim(y.rank() - 2), n = y.dim(y.rank() - 1);
  if (k != k2 || (a_batched && b_batched && x.dim(0) != y.dim(0))) {
    throw DimensionError("bmm: cannot multiply " + shape_string(x.shape()) + " by " +
                         shape_string(y.shape()));
  }
  Tensor out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMatrixMap xa(x.raw() + (a_batched ? i * m * k : 0), static_cast<Eigen::Index>(m),
                      static_cast<Eigen::Index>(k));
    ConstMatrixMap yb(y.raw() + (b_batched ? i * k * n : 0), static_cast<Eigen::Index>(k),
                      static_cast<Eigen::Index>(n));
    MatrixMap o(out.raw() + i * m * n, static_cast<Eigen::Index>(m),
                static_cast<Eigen::Index>(n));
    o.noalias() = xa * yb;
  }
  const int ia = a.id(), ib = b.id();
  const Var parents[] = {a, b};
  return a.tape()->record(
      std::move(out), parents,
      [ia, ib, a_batched, b_batched, batch, m, k, n](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        const Tensor& xv = t.value(ia);
        const Tensor& yv = t.value(ib);
        const auto em = static_cast<Eigen::Index>(m), ek = static_cast<Eigen::Index>(k),
                   en = static_cast<Eigen::Index>(n);
        const bool need_a = t.requires_grad(ia), need_b = t.requires_grad(ib);
        for (std::size_t i = 0; i < batch; ++i) {
          ConstMatrixMap gi(g.raw() + i * m * n, em, en);
          if (need_a) {
            ConstMatrixMap yb(yv.raw() + (b_batched ? i * k * n : 0), ek, en);
            MatrixMap ga(t.grad_buffer(ia).raw() + (a_batched ? i * m * k : 0), em, ek);
            ga.noalias() += gi * yb.transpose();
          }
          if (need_b) {
            ConstMatrixMap xa(xv.raw() + (a_batched ? i * m * k : 0), em, ek);
            MatrixMap gb(t.grad_buffer(ib).raw() + (b_batched ? i * k * n : 0), ek, en);
            gb.noalias() += xa.transpose() * gi;
          }
        }
      });
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) throw DimensionError("transpose expects a matrix, got " + shape_string(x.shape()));
  Tensor out({x.dim(1), x.dim(0)});
  out.as_matrix() = x.as_matrix().transpose();
  const int ia = a.id();
  const Var parents[] = {a};
  return a.tape()->record(std::move(out), parents, [ia](Tape& t, int self) {
    t.grad_buffer(ia).as_matrix() += t.grad_buffer(self).as_matrix().transpose();
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0 ? x : slope * x; },
      [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Var floor_at(Var a, double floor) {
  return unary(
      a, [floor](double x) { return x > floor ? x : floor; },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Var square(Var a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softmax(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.dim * s.inner + in;
      double mx = x[base];
      for (std::size_t d = 1; d < s.dim; ++d) mx = std::max(mx, x[base + d * s.inner]);
      double total = 0.0;
      for (std::size_t d = 0; d < s.dim; ++d) {
        const double e = std::exp(x[base + d * s.inner] - mx);
        y[base + d * s.inner] = e;
        total += e;
      }
      for (std::size_t d = 0; d < s.dim; ++d) y[base + d * s.inner] /= total;
    }
  }
  const int ia = a.id();
  const Var parents[] = {a};
  return a.tape()->record(std::move(y), parents, [ia, s](Tape& t, int self) {
    const Tensor& g = t.grad_buffer(self);
    const Tensor& yv = t.value(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.dim * s.inner + in;
        double dot = 0.0;
        for (std::size_t d = 0; d < s.dim; ++d) {
          const std::size_t i = base + d * s.inner;
          dot += g[i] * yv[i];
        }
        for (std::size_t d = 0; d < s.dim; ++d) {
          const std::size_t i = base + d * s.inner;
          ga[i] += yv[i] * (g[i] - dot);
        }
      }
    }
  });
}

Var log_softmax(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.dim * s.inner + in;
      double mx = x[base];
      for (std::size_t d = 1; d < s.dim; ++d) mx = std::max(mx, x[base + d * s.inner]);
      double total = 0.0;
      for (std::size_t d = 0; d < s.dim; ++d) total += std::exp(x[base + d * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t d = 0; d < s.dim; ++d) y[base + d * s.inner] = x[base + d * s.inner] - lse;
    }
  }
  const int ia = a.id();
  const Var parents[] = {a};
  return a.tape()->record(std::move(y), parents, [ia, s](Tape& t, int self) {
    const Tensor& g = t.grad_buffer(self);
    const Tensor& yv = t.value(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.dim * s.inner + in;
        double total = 0.0;
        for (std::size_t d = 0; d < s.dim; ++d) total += g[base + d * s.inner];
        for (std::size_t d = 0; d < s.dim; ++d) {
          const std::size_t i = base + d * s.inner;
          ga[i] += g[i] - std::exp(yv[i]) * total;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and layout

Var sum(Var a) {
  const Tensor& x = a.value();
  double total = 0.0;
  for (double v : x.data()) total += v;
  const int ia = a.id();
  const Var parents[] = {a};
  return a.tape()->record(Tensor::scalar(total), parents, [ia](Tape& t, int self) {
    const double g = t.grad_buffer(self)[0];
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const int ia = a.id();
  const Var parents[] = {a};
  return a.tape()->record(std::move(out), parents, [ia](Tape& t, int self) {
    accumulate(t.grad_buffer(ia), t.grad_buffer(self));
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_string(first) + " and " +
                           shape_string(s));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_block = out_shape[axis] * inner;

  Tensor out(out_shape);
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t block = v.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.raw() + o * block, block, out.raw() + o * out_block + offset);
    }
    ids.push_back(p.id());
    offsets.push_back(offset);
    offset += block;
  }
  return parts[0].tape()->record(
      std::move(out), parts, [ids, offsets, outer, out_block](Tape& t, int self) {
        const Tensor& g = t.grad_buffer(self);
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (!t.requires_grad(ids[p])) continue;
          Tensor& gp = t.grad_buffer(ids[p]);
          const std::size_t block = gp.size() / outer;
          for (std::size_t o = 0; o < outer; ++o) {
            const double* src = g.raw() + o * out_block + offsets[p];
            double* dst = gp.raw() + o * block;
            for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
          }
        }
      });
}

Var slice(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (x.rank() == 0 || begin > end || end > x.dim(0)) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_string(x.shape()));
  }
  Shape shape = x.shape();
  const std::size_t row = x.size() / shape[0];
  shape[0] = end - begin;
  std::vector<double> data(x.raw() + begin * row, x.raw() + end * row);
  const int ia = a.id();
  const Var parents[] = {a};
  return a.tape()->record(Tensor(shape, std::move(data)), parents,
                          [ia, begin, row](Tape& t, int self) {
                            const Tensor& g = t.grad_buffer(self);
                            double* dst = t.grad_buffer(ia).raw() + begin * row;
                            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                          });
}

}  // namespace gimtp::ad

namespace gimtp::ad {

Var columns(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (x.rank() != 2 || begin > end || end > x.dim(1)) {
    throw DimensionError("columns [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_string(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1), width = end - begin;
  Tensor out({rows, width});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = x[r * cols + begin + c];
  }
  const int ia = a.id();
  const Var parents[] = {a};
  return a.tape()->record(std::move(out), parents,
                          [ia, rows, cols, begin, width](Tape& t, int self) {
                            const Tensor& g = t.grad_buffer(self);
                            Tensor& ga = t.grad_buffer(ia);
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < width; ++c) {
                                ga[r * cols + begin + c] += g[r * width + c];
                              }
                            }
                          });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw DimensionError("layer_norm needs at least one axis");
  const std::size_t d = xv.dim(xv.rank() - 1);
  if (gain.value().shape() != Shape{d} || bias.value().shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain/bias must have shape [" + std::to_string(d) + "]");
  }
  const std::size_t rows = xv.size() / d;
  Tensor y(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(rows);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.raw() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (row[i] - mu) * inv_std[r];
      y[r * d + i] = xhat[r * d + i] * gv[i] + bv[i];
    }
  }
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  const Var parents[] = {x, gain, bias};
  return x.tape()->record(
      std::move(y), parents,
      [ix, ig, ib, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                                  int self) {
        const Tensor& g = t.grad_buffer(self);
        const Tensor& gv = t.value(ig);
        if (t.requires_grad(ig) || t.requires_grad(ib)) {
          Tensor& gg = t.grad_buffer(ig);
          Tensor& gb = t.grad_buffer(ib);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < d; ++i) {
              gg[i] += g[r * d + i] * xhat[r * d + i];
              gb[i] += g[r * d + i];
            }
          }
        }
        if (!t.requires_grad(ix)) return;
        Tensor& gx = t.grad_buffer(ix);
        const double n = static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            const double gh = g[r * d + i] * gv[i];
            sum_g += gh;
            sum_gx += gh * xhat[r * d + i];
          }
          for (std::size_t i = 0; i < d; ++i) {
            const double gh = g[r * d + i] * gv[i];
            gx[r * d + i] += inv_std[r] * (gh - sum_g / n - xhat[r * d + i] * sum_gx / n);
          }
        }
      });
}

}  // namespace gimtp::ad
