#include "cplab/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "cplab/params.hpp"

namespace cplab {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParameter: return "parameter";
    case OpKind::kInput: return "input";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kRelu: return "relu";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kClampMin: return "clamp_min";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kConcat: return "concat";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kMask: return "mask";
    case OpKind::kReshape: return "reshape";
    case OpKind::kDetach: return "detach";
    case OpKind::kPick: return "pick";
    case OpKind::kSquaredError: return "squared_error";
    case OpKind::kCrossEntropy: return "cross_entropy";
  }
  return "?";
}

const NdArray& Var::value() const { return tape->node(id).value; }

// ---- tape -------------------------------------------------------------------

Var Tape::constant(NdArray value) {
  Node n;
  n.value = std::move(value);
  n.op = OpKind::kConstant;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::input(NdArray value, std::string label) {
  Node n;
  n.value = std::move(value);
  n.op = OpKind::kInput;
  n.requires_grad = true;
  n.name = std::move(label);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(const ParameterStore& store, const std::string& name) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var{this, it->second};
  Node n;
  n.value = store.value(name);
  n.op = OpKind::kParameter;
  n.requires_grad = true;
  n.name = name;
  nodes_.push_back(std::move(n));
  param_ids_[name] = nodes_.size() - 1;
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(NdArray value, OpKind op, std::vector<std::size_t> parents,
                 std::function<void(Tape&, std::size_t)> backward) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (auto p : parents) n.requires_grad = n.requires_grad || nodes_.at(p).requires_grad;
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

NdArray& Tape::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = NdArray(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::invalid_argument("backward: root belongs to another tape");
  if (nodes_.at(root.id).value.size() != 1)
    throw ShapeError("backward: root must be scalar, got shape " +
                     shape_str(nodes_[root.id].value.shape()));
  for (auto& n : nodes_) n.grad = NdArray();
  grad_of(root.id)[0] = 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, i);
  }
}

std::map<std::string, NdArray> Tape::parameter_grads() const {
  std::map<std::string, NdArray> out;
  for (const auto& [name, id] : param_ids_) out.emplace(name, grad(Var{const_cast<Tape*>(this), id}));
  return out;
}

NdArray Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.size() == 0) return NdArray(n.value.shape(), 0.0);
  return n.grad;
}

std::map<std::string, NdArray> backward(Var root) {
  root.tape->backward(root);
  return root.tape->parameter_grads();
}

// ---- kernels ----------------------------------------------------------------

namespace {

// c[m,n] += a[m,k] * b[k,n]; zero entries of `a` are skipped (one-hot inputs).
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m,k] += a[m,n] * b[k,n]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  // Row-wise axpy over a transposed copy of b keeps the inner loop contiguous.
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  gemm_nn(a, bt.data(), c, m, n, k);
}

// c[k,n] += a[m,k]^T * b[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

enum class Bcast { kSame, kScalar, kRow, kCol };

Bcast broadcast_kind(const NdArray& a, const NdArray& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (b.size() == 1) return Bcast::kScalar;
  if ((b.rank() == 1 || (b.rank() == 2 && b.dim(0) == 1)) && b.size() == a.cols())
    return Bcast::kRow;
  if (a.rank() == 2 && b.rank() == 2 && b.dim(1) == 1 && b.dim(0) == a.dim(0))
    return Bcast::kCol;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " onto " +
                   shape_str(a.shape()));
}

inline std::size_t bidx(Bcast k, std::size_t i, std::size_t cols) {
  switch (k) {
    case Bcast::kSame: return i;
    case Bcast::kScalar: return 0;
    case Bcast::kRow: return i % cols;
    case Bcast::kCol: return i / cols;
  }
  return 0;
}

// Accumulate a full-size gradient into a possibly broadcast operand.
void reduce_into(NdArray& dst, const NdArray& g, Bcast k, double sign = 1.0) {
  const std::size_t cols = g.cols();
  for (std::size_t i = 0; i < g.size(); ++i) dst[bidx(k, i, cols)] += sign * g[i];
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out.push_back(s[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

template <class F, class D>
Var unary(Var a, OpKind op, F f, D dfdx_from_xy) {
  const NdArray& x = a.value();
  NdArray y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.tape->record(std::move(y), op, {a.id}, [dfdx_from_xy](Tape& t, std::size_t self) {
    const Node& n = t.node(self);
    const std::size_t pid = n.parents[0];
    if (!t.requires_grad(pid)) return;
    const NdArray& x = t.node(pid).value;
    const NdArray& y = n.value;
    const NdArray& g = n.grad;
    NdArray& dx = t.grad_of(pid);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * dfdx_from_xy(x[i], y[i]);
  });
}

void same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape) throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

}  // namespace

// ---- primitives ---------------------------------------------------------------

Var matmul(Var a, Var b) {
  same_tape(a, b, "matmul");
  const NdArray& A = a.value();
  const NdArray& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
    throw ShapeError("matmul: shape mismatch " + shape_str(A.shape()) + " x " +
                     shape_str(B.shape()));
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  NdArray C(Shape{m, n}, 0.0);
  gemm_nn(A.data().data(), B.data().data(), C.data().data(), m, k, n);
  return a.tape->record(std::move(C), OpKind::kMatmul, {a.id, b.id}, [m, k, n](Tape& t, std::size_t self) {
    const Node& node = t.node(self);
    const std::size_t ia = node.parents[0], ib = node.parents[1];
    const double* g = node.grad.data().data();
    if (t.requires_grad(ia))
      gemm_nt(g, t.node(ib).value.data().data(), t.grad_of(ia).data().data(), m, n, k);
    if (t.requires_grad(ib))
      gemm_tn(t.node(ia).value.data().data(), g, t.grad_of(ib).data().data(), m, k, n);
  });
}

Var transpose(Var a) {
  const NdArray& A = a.value();
  if (A.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(A.shape()));
  const std::size_t r = A.dim(0), c = A.dim(1);
  NdArray T(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) T[j * r + i] = A[i * c + j];
  return a.tape->record(std::move(T), OpKind::kTranspose, {a.id}, [r, c](Tape& t, std::size_t self) {
    const Node& n = t.node(self);
    NdArray& d = t.grad_of(n.parents[0]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) d[i * c + j] += n.grad[j * r + i];
  });
}

static Var binary(Var a, Var b, OpKind op, const char* name) {
  same_tape(a, b, name);
  const NdArray& A = a.value();
  const NdArray& B = b.value();
  const Bcast k = broadcast_kind(A, B, name);
  const std::size_t cols = A.cols();
  NdArray C(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) {
    const double bv = B[bidx(k, i, cols)];
    switch (op) {
      case OpKind::kAdd: C[i] = A[i] + bv; break;
      case OpKind::kSub: C[i] = A[i] - bv; break;
      default: C[i] = A[i] * bv; break;
    }
  }
  return a.tape->record(std::move(C), op, {a.id, b.id}, [k, op](Tape& t, std::size_t self) {
    const Node& n = t.node(self);
    const std::size_t ia = n.parents[0], ib = n.parents[1];
    const NdArray& g = n.grad;
    const std::size_t cols = g.cols();
    if (op == OpKind::kMul) {
      const NdArray& A = t.node(ia).value;
      const NdArray& B = t.node(ib).value;
      if (t.requires_grad(ia)) {
        NdArray& da = t.grad_of(ia);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * B[bidx(k, i, cols)];
      }
      if (t.requires_grad(ib)) {
        NdArray& db = t.grad_of(ib);
        for (std::size_t i = 0; i < g.size(); ++i) db[bidx(k, i, cols)] += g[i] * A[i];
      }
      return;
    }
    if (t.requires_grad(ia)) {
      NdArray& da = t.grad_of(ia);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    }
    if (t.requires_grad(ib)) reduce_into(t.grad_of(ib), g, k, op == OpKind::kSub ? -1.0 : 1.0);
  });
}

Var add(Var a, Var b) { return binary(a, b, OpKind::kAdd, "add"); }
Var sub(Var a, Var b) { return binary(a, b, OpKind::kSub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, OpKind::kMul, "mul"); }

Var scale(Var a, double s) {
  return unary(a, OpKind::kScale, [s](double x) { return s * x; },
               [s](double, double) { return s; });
}

Var add_scalar(Var a, double c) {
  return unary(a, OpKind::kAddScalar, [c](double x) { return x + c; },
               [](double, double) { return 1.0; });
}

Var tanh(Var a) {
  return unary(a, OpKind::kTanh, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a, OpKind::kSigmoid,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(a, OpKind::kRelu, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(a, OpKind::kExp, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().values())
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  return unary(a, OpKind::kLog, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var clamp_min(Var a, double lo) {
  return unary(a, OpKind::kClampMin, [lo](double x) { return x > lo ? x : lo; },
               [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

static Var reduce_axis(Var a, std::size_t axis, bool average) {
  const NdArray& A = a.value();
  const AxisSplit s = split_axis(A.shape(), axis, average ? "mean" : "sum");
  NdArray out(drop_axis(A.shape(), axis), 0.0);
  const double f = average ? 1.0 / static_cast<double>(s.n) : 1.0;
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += f * A[(o * s.n + j) * s.inner + i];
  return a.tape->record(std::move(out), average ? OpKind::kMean : OpKind::kSum, {a.id},
                        [s, f](Tape& t, std::size_t self) {
                          const Node& n = t.node(self);
                          NdArray& d = t.grad_of(n.parents[0]);
                          for (std::size_t o = 0; o < s.outer; ++o)
                            for (std::size_t j = 0; j < s.n; ++j)
                              for (std::size_t i = 0; i < s.inner; ++i)
                                d[(o * s.n + j) * s.inner + i] += f * n.grad[o * s.inner + i];
                        });
}

Var sum(Var a, std::size_t axis) { return reduce_axis(a, axis, false); }
Var mean(Var a, std::size_t axis) { return reduce_axis(a, axis, true); }
Var sum_all(Var a) { return reduce_axis(reshape(a, Shape{a.value().size()}), 0, false); }
Var mean_all(Var a) { return reduce_axis(reshape(a, Shape{a.value().size()}), 0, true); }

Var softmax(Var a, std::size_t axis) {
  const NdArray& A = a.value();
  const AxisSplit s = split_axis(A.shape(), axis, "softmax");
  NdArray Y(A.shape());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t j) { return (o * s.n + j) * s.inner + i; };
      double mx = A[at(0)];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, A[at(j)]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) z += (Y[at(j)] = std::exp(A[at(j)] - mx));
      for (std::size_t j = 0; j < s.n; ++j) Y[at(j)] /= z;
    }
  return a.tape->record(std::move(Y), OpKind::kSoftmax, {a.id}, [s](Tape& t, std::size_t self) {
    const Node& n = t.node(self);
    const NdArray& y = n.value;
    const NdArray& g = n.grad;
    NdArray& d = t.grad_of(n.parents[0]);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        auto at = [&](std::size_t j) { return (o * s.n + j) * s.inner + i; };
        double dot = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) dot += g[at(j)] * y[at(j)];
        for (std::size_t j = 0; j < s.n; ++j) d[at(j)] += y[at(j)] * (g[at(j)] - dot);
      }
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape* tape = parts[0].tape;
  const Shape& s0 = parts[0].value().shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_str(s0));
  std::vector<std::size_t> widths;  // n * inner per part
  std::vector<std::size_t> ids;
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p, "concat");
    const Shape& s = p.value().shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
    if (!ok) throw ShapeError("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
    out_shape[axis] += s[axis];
    ids.push_back(p.id);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  for (const Var& p : parts) widths.push_back(p.value().shape()[axis] * inner);
  const std::size_t total = out_shape[axis] * inner;
  NdArray out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const NdArray& v = parts[k].value();
      std::copy_n(v.data().begin() + o * widths[k], widths[k], out.data().begin() + o * total + off);
      off += widths[k];
    }
  }
  return tape->record(std::move(out), OpKind::kConcat, ids,
                      [widths, outer, total](Tape& t, std::size_t self) {
                        const Node& n = t.node(self);
                        std::size_t off = 0;
                        for (std::size_t k = 0; k < n.parents.size(); ++k) {
                          if (t.requires_grad(n.parents[k])) {
                            NdArray& d = t.grad_of(n.parents[k]);
                            for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t j = 0; j < widths[k]; ++j)
                                d[o * widths[k] + j] += n.grad[o * total + off + j];
                          }
                          off += widths[k];
                        }
                      });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const NdArray& A = a.value();
  if (A.rank() != 2) throw ShapeError("gather_rows: expected rank 2, got " + shape_str(A.shape()));
  const std::size_t c = A.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  if (idx.empty()) throw ShapeError("gather_rows: empty index list");
  NdArray out(Shape{idx.size(), c});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= A.dim(0))
      throw ShapeError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " +
                       shape_str(A.shape()));
    std::copy_n(A.data().begin() + idx[r] * c, c, out.data().begin() + r * c);
  }
  return a.tape->record(std::move(out), OpKind::kGatherRows, {a.id},
                        [idx = std::move(idx), c](Tape& t, std::size_t self) {
                          const Node& n = t.node(self);
                          NdArray& d = t.grad_of(n.parents[0]);
                          for (std::size_t r = 0; r < idx.size(); ++r)
                            for (std::size_t j = 0; j < c; ++j) d[idx[r] * c + j] += n.grad[r * c + j];
                        });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const NdArray& A = a.value();
  if (A.rank() != 2 || begin >= end || end > A.dim(1))
    throw ShapeError("slice_cols: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") for " + shape_str(A.shape()));
  const std::size_t r = A.dim(0), c = A.dim(1), w = end - begin;
  NdArray out(Shape{r, w});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = A[i * c + begin + j];
  return a.tape->record(std::move(out), OpKind::kSliceCols, {a.id},
                        [r, c, w, begin](Tape& t, std::size_t self) {
                          const Node& n = t.node(self);
                          NdArray& d = t.grad_of(n.parents[0]);
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < w; ++j) d[i * c + begin + j] += n.grad[i * w + j];
                        });
}

Var mask(Var a, const NdArray& keep) {
  const NdArray& A = a.value();
  if (keep.shape() != A.shape())
    throw ShapeError("mask: mask shape " + shape_str(keep.shape()) + " vs " + shape_str(A.shape()));
  NdArray out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * keep[i];
  return a.tape->record(std::move(out), OpKind::kMask, {a.id}, [keep](Tape& t, std::size_t self) {
    const Node& n = t.node(self);
    NdArray& d = t.grad_of(n.parents[0]);
    for (std::size_t i = 0; i < keep.size(); ++i) d[i] += n.grad[i] * keep[i];
  });
}

Var reshape(Var a, Shape shape) {
  NdArray out = a.value().reshaped(std::move(shape));
  return a.tape->record(std::move(out), OpKind::kReshape, {a.id}, [](Tape& t, std::size_t self) {
    const Node& n = t.node(self);
    NdArray& d = t.grad_of(n.parents[0]);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += n.grad[i];
  });
}

Var detach(Var a) { return a.tape->constant(a.value()); }

Var pick(Var a, std::span<const std::size_t> cols) {
  const NdArray& A = a.value();
  if (A.rank() != 2 || cols.size() != A.dim(0))
    throw ShapeError("pick: " + std::to_string(cols.size()) + " indices for " + shape_str(A.shape()));
  const std::size_t c = A.dim(1);
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  NdArray out(Shape{idx.size(), 1});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= c) throw ShapeError("pick: column " + std::to_string(idx[r]) + " out of range");
    out[r] = A[r * c + idx[r]];
  }
  return a.tape->record(std::move(out), OpKind::kPick, {a.id},
                        [idx = std::move(idx), c](Tape& t, std::size_t self) {
                          const Node& n = t.node(self);
                          NdArray& d = t.grad_of(n.parents[0]);
                          for (std::size_t r = 0; r < idx.size(); ++r) d[r * c + idx[r]] += n.grad[r];
                        });
}

Var squared_error(Var a, Var b) {
  same_tape(a, b, "squared_error");
  const NdArray& A = a.value();
  const NdArray& B = b.value();
  if (A.shape() != B.shape())
    throw ShapeError("squared_error: shape mismatch " + shape_str(A.shape()) + " vs " +
                     shape_str(B.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) s += (A[i] - B[i]) * (A[i] - B[i]);
  const double inv = 1.0 / static_cast<double>(A.size());
  return a.tape->record(NdArray::scalar(s * inv), OpKind::kSquaredError, {a.id, b.id},
                        [inv](Tape& t, std::size_t self) {
                          const Node& n = t.node(self);
                          const std::size_t ia = n.parents[0], ib = n.parents[1];
                          const NdArray& A = t.node(ia).value;
                          const NdArray& B = t.node(ib).value;
                          const double g = n.grad[0] * 2.0 * inv;
                          if (t.requires_grad(ia)) {
                            NdArray& d = t.grad_of(ia);
                            for (std::size_t i = 0; i < A.size(); ++i) d[i] += g * (A[i] - B[i]);
                          }
                          if (t.requires_grad(ib)) {
                            NdArray& d = t.grad_of(ib);
                            for (std::size_t i = 0; i < A.size(); ++i) d[i] -= g * (A[i] - B[i]);
                          }
                        });
}

Var cross_entropy_logits(Var logits, std::span<const std::size_t> targets) {
  const NdArray& L = logits.value();
  if (L.rank() != 2 || targets.size() != L.dim(0))
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(L.shape()));
  const std::size_t r = L.dim(0), c = L.dim(1);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  NdArray probs(L.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (tgt[i] >= c) throw ShapeError("cross_entropy: target " + std::to_string(tgt[i]) + " out of range");
    const double* li = L.data().data() + i * c;
    double mx = li[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, li[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (probs[i * c + j] = std::exp(li[j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    loss += -(li[tgt[i]] - mx - std::log(z));
  }
  const double inv = 1.0 / static_cast<double>(r);
  return logits.tape->record(NdArray::scalar(loss * inv), OpKind::kCrossEntropy, {logits.id},
                             [probs = std::move(probs), tgt = std::move(tgt), c, inv](Tape& t, std::size_t self) {
                               const Node& n = t.node(self);
                               NdArray& d = t.grad_of(n.parents[0]);
                               const double g = n.grad[0] * inv;
                               for (std::size_t i = 0; i < tgt.size(); ++i)
                                 for (std::size_t j = 0; j < c; ++j)
                                   d[i * c + j] += g * (probs[i * c + j] - (j == tgt[i] ? 1.0 : 0.0));
                             });
}

}  // namespace cplab
