#include "dtlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "dtlab/kernels.hpp"

namespace dtlab {

// ---------------------------------------------------------------- ParameterSet

template <typename T>
std::size_t ParameterSet<T>::add(std::string name, Tensor<T> value) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor<T> grad(value.shape());
  params_.push_back(Parameter<T>{std::move(name), std::move(value), std::move(grad), true});
  return params_.size() - 1;
}

template <typename T>
std::optional<std::size_t> ParameterSet<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

template <typename T>
std::size_t ParameterSet<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : params_) p.grad.fill(T{0});
}

template <typename T>
void ParameterSet<T>::set_trainable(bool trainable) {
  for (auto& p : params_) p.trainable = trainable;
}

// ------------------------------------------------------------------------ Tape

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("tape: invalid variable");
  return nodes_[v.id];
}

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
  if (v.id >= nodes_.size()) throw std::out_of_range("tape: invalid variable");
  return nodes_[v.id];
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::variable(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::parameter(Parameter<T>& p) {
  Node n;
  n.view = &p.value;
  n.requires_grad = p.trainable;
  if (p.trainable) {
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor<T>(p.value.shape());
    n.grad_sink = &p.grad;
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  const Node& n = node(v);
  return n.view ? *n.view : n.owned;
}

template <typename T>
Tensor<T> Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad_sink) return *n.grad_sink;
  if (n.grad.empty()) return Tensor<T>(value(v).shape());
  return n.grad;
}

template <typename T>
Var Tape<T>::record(Tensor<T> value, bool requires_grad, Backward fn) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Tape<T>::grad_accumulator(Var v) {
  Node& n = node(v);
  if (n.grad_sink) return *n.grad_sink;
  if (n.grad.empty()) n.grad = Tensor<T>((n.view ? *n.view : n.owned).shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (backward_done_) throw std::logic_error("backward called twice without reset");
  const Tensor<T>& lv = value(loss);
  if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
  backward_done_ = true;
  if (!node(loss).requires_grad) return;
  grad_accumulator(loss)[0] += T{1};
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad, n.view ? *n.view : n.owned);
  }
}

template <typename T>
void Tape<T>::reset() {
  nodes_.clear();
  macs_ = {};
  backward_done_ = false;
}

// -------------------------------------------------------------------- ops

namespace op {

namespace {

template <typename T>
void require_same(const char* name, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError(name, a.shape(), b.shape());
}

template <typename T>
bool any_grad(const Tape<T>& t, std::initializer_list<Var> vars) {
  for (Var v : vars) {
    if (v.valid() && t.requires_grad(v)) return true;
  }
  return false;
}

template <typename T>
std::size_t bcast_row(Broadcast mode, std::size_t r, std::size_t rows, std::size_t vrows) {
  return mode == Broadcast::Grouped ? r / (rows / vrows) : r % vrows;
}

}  // namespace

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require_same("add", av, bv);
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return t.record(std::move(out), any_grad(t, {a, b}), [a, b](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      auto& ga = tp.grad_accumulator(v);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  });
}

template <typename T>
Var sub(Tape<T>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require_same("sub", av, bv);
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return t.record(std::move(out), any_grad(t, {a, b}), [a, b](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    if (tp.requires_grad(a)) {
      auto& ga = tp.grad_accumulator(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(b)) {
      auto& gb = tp.grad_accumulator(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var mul(Tape<T>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require_same("mul", av, bv);
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return t.record(std::move(out), any_grad(t, {a, b}), [a, b](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    const auto& av = tp.value(a);
    const auto& bv = tp.value(b);
    if (tp.requires_grad(a)) {
      auto& ga = tp.grad_accumulator(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(b)) {
      auto& gb = tp.grad_accumulator(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& t, Var a, T s) {
  Tensor<T> out = t.value(a);
  for (auto& x : out.values()) x *= s;
  return t.record(std::move(out), t.requires_grad(a), [a, s](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    auto& ga = tp.grad_accumulator(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

template <typename T>
Var add_scalar(Tape<T>& t, Var a, T s) {
  Tensor<T> out = t.value(a);
  for (auto& x : out.values()) x += s;
  return t.record(std::move(out), t.requires_grad(a), [a](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    auto& ga = tp.grad_accumulator(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

namespace {

template <typename T>
void check_bcast(const char* name, const Tensor<T>& x, const Tensor<T>& v) {
  if (v.cols() != x.cols() || v.rows() == 0 || x.rows() % v.rows() != 0) throw ShapeError(name, x.shape(), v.shape());
}

}  // namespace

template <typename T>
Var add_bcast(Tape<T>& t, Var x, Var v, Broadcast mode) {
  const auto& xv = t.value(x);
  const auto& vv = t.value(v);
  check_bcast("add_bcast", xv, vv);
  Tensor<T> out = xv;
  const std::size_t rows = xv.rows(), cols = xv.cols(), vrows = vv.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* vr = vv.data() + bcast_row<T>(mode, r, rows, vrows) * cols;
    T* o = out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] += vr[c];
  }
  return t.record(std::move(out), any_grad(t, {x, v}), [x, v, mode](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    const std::size_t rows = g.rows(), cols = g.cols();
    if (tp.requires_grad(x)) {
      auto& gx = tp.grad_accumulator(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tp.requires_grad(v)) {
      auto& gv = tp.grad_accumulator(v);
      const std::size_t vrows = gv.rows();
      for (std::size_t r = 0; r < rows; ++r) {
        T* dst = gv.data() + bcast_row<T>(mode, r, rows, vrows) * cols;
        const T* src = g.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
      }
    }
  });
}

template <typename T>
Var mul_bcast(Tape<T>& t, Var x, Var v, Broadcast mode) {
  const auto& xv = t.value(x);
  const auto& vv = t.value(v);
  check_bcast("mul_bcast", xv, vv);
  Tensor<T> out = xv;
  const std::size_t rows = xv.rows(), cols = xv.cols(), vrows = vv.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* vr = vv.data() + bcast_row<T>(mode, r, rows, vrows) * cols;
    T* o = out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] *= vr[c];
  }
  return t.record(std::move(out), any_grad(t, {x, v}), [x, v, mode](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    const auto& xv = tp.value(x);
    const auto& vv = tp.value(v);
    const std::size_t rows = g.rows(), cols = g.cols(), vrows = vv.rows();
    if (tp.requires_grad(x)) {
      auto& gx = tp.grad_accumulator(x);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* vr = vv.data() + bcast_row<T>(mode, r, rows, vrows) * cols;
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r * cols + c] * vr[c];
      }
    }
    if (tp.requires_grad(v)) {
      auto& gv = tp.grad_accumulator(v);
      for (std::size_t r = 0; r < rows; ++r) {
        T* dst = gv.data() + bcast_row<T>(mode, r, rows, vrows) * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += g[r * cols + c] * xv[r * cols + c];
      }
    }
  });
}

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) throw ShapeError("matmul", av.shape(), bv.shape());
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  kernels::gemm_nn(m, n, k, av.data(), bv.data(), out.data());
  return t.record(std::move(out), any_grad(t, {a, b}), [a, b, m, n, k](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    if (tp.requires_grad(a)) {
      kernels::gemm_nt(m, k, n, g.data(), tp.value(b).data(), tp.grad_accumulator(a).data());
    }
    if (tp.requires_grad(b)) {
      kernels::gemm_tn(k, n, m, tp.value(a).data(), g.data(), tp.grad_accumulator(b).data());
    }
  });
}

template <typename T>
Var linear(Tape<T>& t, Var x, Var w, Var bias) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(w);
  if (wv.rank() != 2 || xv.cols() != wv.dim(0)) throw ShapeError("linear", xv.shape(), wv.shape());
  const std::size_t rows = xv.rows(), in = wv.dim(0), outd = wv.dim(1);
  Shape oshape = xv.shape();
  oshape.back() = outd;
  Tensor<T> out(oshape);
  if (bias.valid()) {
    const auto& bv = t.value(bias);
    if (bv.size() != outd) throw ShapeError("linear bias", wv.shape(), bv.shape());
    for (std::size_t r = 0; r < rows; ++r) std::copy(bv.data(), bv.data() + outd, out.data() + r * outd);
  }
  kernels::gemm_nn(rows, outd, in, xv.data(), wv.data(), out.data());
  t.macs().projection += static_cast<std::uint64_t>(rows) * in * outd;
  return t.record(std::move(out), any_grad(t, {x, w, bias}),
                  [x, w, bias, rows, in, outd](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
                    if (tp.requires_grad(x)) {
                      kernels::gemm_nt(rows, in, outd, g.data(), tp.value(w).data(), tp.grad_accumulator(x).data());
                    }
                    if (tp.requires_grad(w)) {
                      kernels::gemm_tn(in, outd, rows, tp.value(x).data(), g.data(), tp.grad_accumulator(w).data());
                    }
                    if (bias.valid() && tp.requires_grad(bias)) {
                      auto& gb = tp.grad_accumulator(bias);
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < outd; ++c) gb[c] += g[r * outd + c];
                      }
                    }
                  });
}

template <typename T>
Var layernorm(Tape<T>& t, Var x, T eps) {
  const auto& xv = t.value(x);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor<T> out(xv.shape());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * cols;
    T mu{0};
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<T>(cols);
    T var{0};
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<T>(cols);
    const T is = T{1} / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = (xr[c] - mu) * is;
  }
  return t.record(std::move(out), t.requires_grad(x),
                  [x, inv_std = std::move(inv_std), rows, cols](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>& y) {
                    auto& gx = tp.grad_accumulator(x);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const T* gr = g.data() + r * cols;
                      const T* yr = y.data() + r * cols;
                      T mg{0}, mgy{0};
                      for (std::size_t c = 0; c < cols; ++c) {
                        mg += gr[c];
                        mgy += gr[c] * yr[c];
                      }
                      mg /= static_cast<T>(cols);
                      mgy /= static_cast<T>(cols);
                      T* gxr = gx.data() + r * cols;
                      for (std::size_t c = 0; c < cols; ++c) gxr[c] += inv_std[r] * (gr[c] - mg - yr[c] * mgy);
                    }
                  });
}

namespace {

template <typename T>
constexpr T kGeluC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
template <typename T>
constexpr T kGeluA = static_cast<T>(0.044715);

}  // namespace

template <typename T>
Var gelu(Tape<T>& t, Var x) {
  const auto& xv = t.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T u = xv[i];
    out[i] = T{0.5} * u * (T{1} + std::tanh(kGeluC<T> * (u + kGeluA<T> * u * u * u)));
  }
  return t.record(std::move(out), t.requires_grad(x), [x](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    const auto& xv = tp.value(x);
    auto& gx = tp.grad_accumulator(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T u = xv[i];
      const T th = std::tanh(kGeluC<T> * (u + kGeluA<T> * u * u * u));
      const T dth = (T{1} - th * th) * kGeluC<T> * (T{1} + T{3} * kGeluA<T> * u * u);
      gx[i] += g[i] * (T{0.5} * (T{1} + th) + T{0.5} * u * dth);
    }
  });
}

template <typename T>
Var silu(Tape<T>& t, Var x) {
  const auto& xv = t.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] / (T{1} + std::exp(-xv[i]));
  return t.record(std::move(out), t.requires_grad(x), [x](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    const auto& xv = tp.value(x);
    auto& gx = tp.grad_accumulator(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = T{1} / (T{1} + std::exp(-xv[i]));
      gx[i] += g[i] * s * (T{1} + xv[i] * (T{1} - s));
    }
  });
}

namespace {

// Softmax over the entries of `row` whose mask byte is set (all when mask is
// null). Masked entries become exactly zero.
template <typename T>
void softmax_row(T* row, std::size_t n, const std::uint8_t* mask) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (!mask || mask[j]) mx = std::max(mx, row[j]);
  }
  if (mx == -std::numeric_limits<T>::infinity()) {
    std::fill(row, row + n, T{0});
    return;
  }
  T sum{0};
  for (std::size_t j = 0; j < n; ++j) {
    if (!mask || mask[j]) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    } else {
      row[j] = T{0};
    }
  }
  const T inv = T{1} / sum;
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
}

template <typename T>
void softmax_row_backward(const T* p, const T* dp, T* ds, std::size_t n) {
  T dot{0};
  for (std::size_t j = 0; j < n; ++j) dot += p[j] * dp[j];
  for (std::size_t j = 0; j < n; ++j) ds[j] = p[j] * (dp[j] - dot);
}

}  // namespace

template <typename T>
Var softmax(Tape<T>& t, Var x) {
  Tensor<T> out = t.value(x);
  const std::size_t rows = out.rows(), cols = out.cols();
  for (std::size_t r = 0; r < rows; ++r) softmax_row(out.data() + r * cols, cols, static_cast<const std::uint8_t*>(nullptr));
  return t.record(std::move(out), t.requires_grad(x), [x](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>& y) {
    auto& gx = tp.grad_accumulator(x);
    const std::size_t rows = y.rows(), cols = y.cols();
    std::vector<T> ds(cols);
    for (std::size_t r = 0; r < rows; ++r) {
      softmax_row_backward(y.data() + r * cols, g.data() + r * cols, ds.data(), cols);
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += ds[c];
    }
  });
}

namespace {

// Copies head `h` of batch element `b` out of a [B*N, H] token matrix.
template <typename T>
void gather_head(const T* src, std::size_t b, std::size_t n, std::size_t width, std::size_t h, std::size_t dh, T* dst) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* s = src + (b * n + i) * width + h * dh;
    std::copy(s, s + dh, dst + i * dh);
  }
}

template <typename T>
void scatter_add_head(const T* src, std::size_t b, std::size_t n, std::size_t width, std::size_t h, std::size_t dh, T* dst) {
  for (std::size_t i = 0; i < n; ++i) {
    T* d = dst + (b * n + i) * width + h * dh;
    for (std::size_t c = 0; c < dh; ++c) d[c] += src[i * dh + c];
  }
}

}  // namespace

template <typename T>
Var attention(Tape<T>& t, Var q, Var k, Var v, std::size_t batch, std::size_t heads,
              std::span<const std::uint8_t> key_mask) {
  const auto& qv = t.value(q);
  const auto& kv = t.value(k);
  const auto& vv = t.value(v);
  const std::size_t width = qv.cols();
  if (kv.shape() != vv.shape() || kv.cols() != width) throw ShapeError("attention k/v", kv.shape(), vv.shape());
  if (batch == 0 || heads == 0 || width % heads != 0 || qv.rows() % batch != 0 || kv.rows() % batch != 0) {
    throw ShapeError("attention", qv.shape(), kv.shape());
  }
  const std::size_t nq = qv.rows() / batch, nk = kv.rows() / batch, dh = width / heads;
  if (!key_mask.empty() && key_mask.size() != batch * nk) {
    throw ShapeError("attention mask", kv.shape(), Shape{key_mask.size()});
  }
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  Tensor<T> out(qv.shape());
  std::vector<T> probs(batch * heads * nq * nk);
  std::vector<T> qh(nq * dh), kh(nk * dh), vh(nk * dh), oh(nq * dh);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::uint8_t* mask = key_mask.empty() ? nullptr : key_mask.data() + b * nk;
    for (std::size_t h = 0; h < heads; ++h) {
      gather_head(qv.data(), b, nq, width, h, dh, qh.data());
      gather_head(kv.data(), b, nk, width, h, dh, kh.data());
      gather_head(vv.data(), b, nk, width, h, dh, vh.data());
      T* p = probs.data() + (b * heads + h) * nq * nk;
      kernels::gemm_nt(nq, nk, dh, qh.data(), kh.data(), p);
      for (std::size_t i = 0; i < nq; ++i) {
        T* row = p + i * nk;
        for (std::size_t j = 0; j < nk; ++j) row[j] *= scale;
        softmax_row(row, nk, mask);
      }
      std::fill(oh.begin(), oh.end(), T{0});
      kernels::gemm_nn(nq, dh, nk, p, vh.data(), oh.data());
      scatter_add_head(oh.data(), b, nq, width, h, dh, out.data());
    }
  }
  t.macs().attention += static_cast<std::uint64_t>(2) * batch * nq * nk * width;
  return t.record(
      std::move(out), any_grad(t, {q, k, v}),
      [q, k, v, batch, heads, nq, nk, dh, width, scale, probs = std::move(probs)](Tape<T>& tp, const Tensor<T>& g,
                                                                                  const Tensor<T>&) {
        const auto& qv = tp.value(q);
        const auto& kv = tp.value(k);
        const auto& vv = tp.value(v);
        const bool gq = tp.requires_grad(q), gk = tp.requires_grad(k), gv = tp.requires_grad(v);
        T* gqd = gq ? tp.grad_accumulator(q).data() : nullptr;
        T* gkd = gk ? tp.grad_accumulator(k).data() : nullptr;
        T* gvd = gv ? tp.grad_accumulator(v).data() : nullptr;
        std::vector<T> qh(nq * dh), kh(nk * dh), vh(nk * dh), doh(nq * dh);
        std::vector<T> dp(nq * nk), ds(nq * nk), dq(nq * dh), dk(nk * dh), dv(nk * dh);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const T* p = probs.data() + (b * heads + h) * nq * nk;
            gather_head(g.data(), b, nq, width, h, dh, doh.data());
            gather_head(vv.data(), b, nk, width, h, dh, vh.data());
            if (gv) {
              std::fill(dv.begin(), dv.end(), T{0});
              kernels::gemm_tn(nk, dh, nq, p, doh.data(), dv.data());
              scatter_add_head(dv.data(), b, nk, width, h, dh, gvd);
            }
            if (!gq && !gk) continue;
            std::fill(dp.begin(), dp.end(), T{0});
            kernels::gemm_nt(nq, nk, dh, doh.data(), vh.data(), dp.data());
            for (std::size_t i = 0; i < nq; ++i) {
              softmax_row_backward(p + i * nk, dp.data() + i * nk, ds.data() + i * nk, nk);
            }
            for (auto& x : ds) x *= scale;
            gather_head(qv.data(), b, nq, width, h, dh, qh.data());
            gather_head(kv.data(), b, nk, width, h, dh, kh.data());
            if (gq) {
              std::fill(dq.begin(), dq.end(), T{0});
              kernels::gemm_nn(nq, dh, nk, ds.data(), kh.data(), dq.data());
              scatter_add_head(dq.data(), b, nq, width, h, dh, gqd);
            }
            if (gk) {
              std::fill(dk.begin(), dk.end(), T{0});
              kernels::gemm_tn(nk, dh, nq, ds.data(), qh.data(), dk.data());
              scatter_add_head(dk.data(), b, nk, width, h, dh, gkd);
            }
          }
        }
      });
}

template <typename T>
Var concat_cols(Tape<T>& t, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = t.value(parts[0]).rows();
  std::vector<std::size_t> widths;
  bool rg = false;
  for (Var p : parts) {
    const auto& pv = t.value(p);
    if (pv.rows() != rows) throw ShapeError("concat_cols", t.value(parts[0]).shape(), pv.shape());
    widths.push_back(pv.cols());
    rg = rg || t.requires_grad(p);
  }
  const std::size_t total = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  Tensor<T> out({rows, total});
  std::size_t off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& pv = t.value(parts[i]);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(pv.data() + r * widths[i], widths[i], out.data() + r * total + off);
    off += widths[i];
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.record(std::move(out), rg, [ps, widths, rows, total](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (tp.requires_grad(ps[i])) {
        auto& gp = tp.grad_accumulator(ps[i]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[i]; ++c) gp[r * widths[i] + c] += g[r * total + off + c];
        }
      }
      off += widths[i];
    }
  });
}

template <typename T>
std::vector<Var> split_cols(Tape<T>& t, Var x, std::span<const std::size_t> widths) {
  const auto& xv = t.value(x);
  const std::size_t total = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  if (total != xv.cols()) throw ShapeError("split_cols: widths sum to " + std::to_string(total) + " but input is " + shape_str(xv.shape()));
  const std::size_t rows = xv.rows();
  std::vector<Var> outs;
  std::size_t off = 0;
  for (std::size_t w : widths) {
    Tensor<T> part({rows, w});
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(t.value(x).data() + r * total + off, w, part.data() + r * w);
    outs.push_back(t.record(std::move(part), t.requires_grad(x), [x, off, w, rows, total](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
      auto& gx = tp.grad_accumulator(x);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < w; ++c) gx[r * total + off + c] += g[r * w + c];
      }
    }));
    off += w;
  }
  return outs;
}

template <typename T>
Var concat_tokens(Tape<T>& t, std::span<const Var> parts, std::size_t batch) {
  if (parts.empty() || batch == 0) throw ShapeError("concat_tokens: no inputs");
  const std::size_t cols = t.value(parts[0]).cols();
  std::vector<std::size_t> lens;
  bool rg = false;
  for (Var p : parts) {
    const auto& pv = t.value(p);
    if (pv.cols() != cols || pv.rows() % batch != 0) throw ShapeError("concat_tokens", t.value(parts[0]).shape(), pv.shape());
    lens.push_back(pv.rows() / batch);
    rg = rg || t.requires_grad(p);
  }
  const std::size_t n = std::accumulate(lens.begin(), lens.end(), std::size_t{0});
  Tensor<T> out({batch * n, cols});
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const auto& pv = t.value(parts[i]);
      std::copy_n(pv.data() + b * lens[i] * cols, lens[i] * cols, out.data() + (b * n + off) * cols);
      off += lens[i];
    }
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.record(std::move(out), rg, [ps, lens, n, cols, batch](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (tp.requires_grad(ps[i])) {
        auto& gp = tp.grad_accumulator(ps[i]);
        for (std::size_t b = 0; b < batch; ++b) {
          const T* src = g.data() + (b * n + off) * cols;
          T* dst = gp.data() + b * lens[i] * cols;
          for (std::size_t j = 0; j < lens[i] * cols; ++j) dst[j] += src[j];
        }
      }
      off += lens[i];
    }
  });
}

template <typename T>
Var slice_tokens(Tape<T>& t, Var x, std::size_t batch, std::size_t start, std::size_t len) {
  const auto& xv = t.value(x);
  if (batch == 0 || xv.rows() % batch != 0 || start + len > xv.rows() / batch) {
    throw ShapeError("slice_tokens: cannot take [" + std::to_string(start) + ", +" + std::to_string(len) + ") per sample from " +
                     shape_str(xv.shape()) + " with batch " + std::to_string(batch));
  }
  const std::size_t n = xv.rows() / batch, cols = xv.cols();
  Tensor<T> out({batch * len, cols});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(xv.data() + (b * n + start) * cols, len * cols, out.data() + b * len * cols);
  }
  return t.record(std::move(out), t.requires_grad(x), [x, batch, n, start, len, cols](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    auto& gx = tp.grad_accumulator(x);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* src = g.data() + b * len * cols;
      T* dst = gx.data() + (b * n + start) * cols;
      for (std::size_t j = 0; j < len * cols; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var reshape(Tape<T>& t, Var x, Shape shape) {
  Tensor<T> out = t.value(x).reshaped(std::move(shape));
  return t.record(std::move(out), t.requires_grad(x), [x](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    auto& gx = tp.grad_accumulator(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var transpose(Tape<T>& t, Var x) {
  const auto& xv = t.value(x);
  if (xv.rank() != 2) throw ShapeError("transpose", xv.shape(), Shape{0, 0});
  const std::size_t r = xv.dim(0), c = xv.dim(1);
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  }
  return t.record(std::move(out), t.requires_grad(x), [x, r, c](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    auto& gx = tp.grad_accumulator(x);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    }
  });
}

template <typename T>
Var gather(Tape<T>& t, Var x, std::span<const std::uint32_t> index, Shape out_shape) {
  const auto& xv = t.value(x);
  if (shape_size(out_shape) != index.size()) throw ShapeError("gather", Shape{index.size()}, out_shape);
  Tensor<T> out(std::move(out_shape));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= xv.size()) throw std::out_of_range("gather: index out of range");
    out[i] = xv[index[i]];
  }
  std::vector<std::uint32_t> idx(index.begin(), index.end());
  return t.record(std::move(out), t.requires_grad(x), [x, idx = std::move(idx)](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    auto& gx = tp.grad_accumulator(x);
    for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
  });
}

template <typename T>
Var embedding(Tape<T>& t, Var table, std::span<const int> ids) {
  const auto& tv = t.value(table);
  const std::size_t vocab = tv.rows(), cols = tv.cols();
  Tensor<T> out({ids.size(), cols});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) throw std::out_of_range("embedding: token id out of range");
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * cols, cols, out.data() + i * cols);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return t.record(std::move(out), t.requires_grad(table), [table, saved = std::move(saved), cols](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    auto& gt = tp.grad_accumulator(table);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      T* dst = gt.data() + static_cast<std::size_t>(saved[i]) * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += g[i * cols + c];
    }
  });
}

template <typename T>
Var sum(Tape<T>& t, Var x) {
  const auto& xv = t.value(x);
  T s{0};
  for (T v : xv.values()) s += v;
  return t.record(Tensor<T>({1}, {s}), t.requires_grad(x), [x](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    auto& gx = tp.grad_accumulator(x);
    for (auto& v : gx.values()) v += g[0];
  });
}

template <typename T>
Var mean(Tape<T>& t, Var x) {
  const auto& xv = t.value(x);
  T s{0};
  for (T v : xv.values()) s += v;
  const T n = static_cast<T>(xv.size());
  return t.record(Tensor<T>({1}, {s / n}), t.requires_grad(x), [x, n](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    auto& gx = tp.grad_accumulator(x);
    for (auto& v : gx.values()) v += g[0] / n;
  });
}

template <typename T>
Var mse(Tape<T>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require_same("mse", av, bv);
  T s{0};
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T d = av[i] - bv[i];
    s += d * d;
  }
  const T n = static_cast<T>(av.size());
  return t.record(Tensor<T>({1}, {s / n}), any_grad(t, {a, b}), [a, b, n](Tape<T>& tp, const Tensor<T>& g, const Tensor<T>&) {
    const auto& av = tp.value(a);
    const auto& bv = tp.value(b);
    const T k = T{2} * g[0] / n;
    if (tp.requires_grad(a)) {
      auto& ga = tp.grad_accumulator(a);
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += k * (av[i] - bv[i]);
    }
    if (tp.requires_grad(b)) {
      auto& gb = tp.grad_accumulator(b);
      for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= k * (av[i] - bv[i]);
    }
  });
}

}  // namespace op

#define DTLAB_INSTANTIATE_OPS(T)                                                                           \
  template class ParameterSet<T>;                                                                          \
  template class Tape<T>;                                                                                  \
  template Var op::add<T>(Tape<T>&, Var, Var);                                                             \
  template Var op::sub<T>(Tape<T>&, Var, Var);                                                             \
  template Var op::mul<T>(Tape<T>&, Var, Var);                                                             \
  template Var op::scale<T>(Tape<T>&, Var, T);                                                             \
  template Var op::add_scalar<T>(Tape<T>&, Var, T);                                                        \
  template Var op::add_bcast<T>(Tape<T>&, Var, Var, Broadcast);                                            \
  template Var op::mul_bcast<T>(Tape<T>&, Var, Var, Broadcast);                                            \
  template Var op::matmul<T>(Tape<T>&, Var, Var);                                                          \
  template Var op::linear<T>(Tape<T>&, Var, Var, Var);                                                     \
  template Var op::layernorm<T>(Tape<T>&, Var, T);                                                         \
  template Var op::gelu<T>(Tape<T>&, Var);                                                                 \
  template Var op::silu<T>(Tape<T>&, Var);                                                                 \
  template Var op::softmax<T>(Tape<T>&, Var);                                                              \
  template Var op::attention<T>(Tape<T>&, Var, Var, Var, std::size_t, std::size_t,                         \
                                std::span<const std::uint8_t>);                                            \
  template Var op::concat_cols<T>(Tape<T>&, std::span<const Var>);                                         \
  template std::vector<Var> op::split_cols<T>(Tape<T>&, Var, std::span<const std::size_t>);                \
  template Var op::concat_tokens<T>(Tape<T>&, std::span<const Var>, std::size_t);                          \
  template Var op::slice_tokens<T>(Tape<T>&, Var, std::size_t, std::size_t, std::size_t);                  \
  template Var op::reshape<T>(Tape<T>&, Var, Shape);                                                       \
  template Var op::transpose<T>(Tape<T>&, Var);                                                            \
  template Var op::gather<T>(Tape<T>&, Var, std::span<const std::uint32_t>, Shape);                        \
  template Var op::embedding<T>(Tape<T>&, Var, std::span<const int>);                                      \
  template Var op::sum<T>(Tape<T>&, Var);                                                                  \
  template Var op::mean<T>(Tape<T>&, Var);                                                                 \
  template Var op::mse<T>(Tape<T>&, Var, Var);

DTLAB_INSTANTIATE_OPS(float)
DTLAB_INSTANTIATE_OPS(double)

}  // namespace dtlab
