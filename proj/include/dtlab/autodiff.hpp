#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records nodes in creation order, which is already a topological
// order, so backward() is a single reverse sweep. Parameters live outside the
// tape in a ParameterSet; a parameter leaf reads the parameter value in place
// and accumulates straight into the parameter's gradient buffer.

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dtlab/tensor.hpp"

namespace dtlab {

struct Var {
  static constexpr std::size_t kInvalid = static_cast<std::size_t>(-1);
  std::size_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
};

/// Ordered, name-addressable parameter storage. Element addresses are stable
/// for the lifetime of the set.
template <typename T>
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor<T> value);

  Parameter<T>& operator[](std::size_t id) { return params_.at(id); }
  const Parameter<T>& operator[](std::size_t id) const { return params_.at(id); }
  std::size_t size() const { return params_.size(); }
  std::optional<std::size_t> find(std::string_view name) const;

  /// Total scalar count across all parameters.
  std::size_t element_count() const;
  void zero_grad();
  void set_trainable(bool trainable);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter<T>> params_;
};

/// Multiply-accumulate tally filled in by the linear and attention ops.
struct MacCounter {
  std::uint64_t projection = 0;  // weight matmuls (linear layers)
  std::uint64_t attention = 0;   // QK^T and PV products
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out, const Tensor<T>& out)>;

  Var constant(Tensor<T> value);
  /// Leaf that requires a gradient (readable through grad() after backward).
  Var variable(Tensor<T> value);
  Var parameter(Parameter<T>& p);

  const Tensor<T>& value(Var v) const;
  /// Gradient of a node after backward(); zeros if the node was not reached.
  Tensor<T> grad(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Appends an op result. `fn` receives the node's accumulated gradient and
  /// its forward value.
  Var record(Tensor<T> value, bool requires_grad, Backward fn);
  /// Gradient buffer of `v`, zero-allocated on first use.
  Tensor<T>& grad_accumulator(Var v);

  /// Reverse sweep from a scalar loss. A second call without reset() throws.
  void backward(Var loss);
  void reset();

  std::size_t size() const { return nodes_.size(); }
  MacCounter& macs() { return macs_; }
  const MacCounter& macs() const { return macs_; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* view = nullptr;
    Tensor<T> grad;
    Tensor<T>* grad_sink = nullptr;  // parameter gradient, when a parameter leaf
    Backward backward;
    bool requires_grad = false;
  };
  const Node& node(Var v) const;
  Node& node(Var v);

  std::vector<Node> nodes_;
  MacCounter macs_;
  bool backward_done_ = false;
};

enum class Broadcast {
  Grouped,  // row r of x uses row r / (x.rows / v.rows) of v (per-sample vectors)
  Tiled,    // row r of x uses row r % v.rows of v (per-position tables)
};

namespace op {

template <typename T> Var add(Tape<T>& t, Var a, Var b);
template <typename T> Var sub(Tape<T>& t, Var a, Var b);
template <typename T> Var mul(Tape<T>& t, Var a, Var b);
template <typename T> Var scale(Tape<T>& t, Var a, T s);
template <typename T> Var add_scalar(Tape<T>& t, Var a, T s);

/// x[R,C] (+|*) v[Rv,C] with Rv dividing R.
template <typename T> Var add_bcast(Tape<T>& t, Var x, Var v, Broadcast mode = Broadcast::Grouped);
template <typename T> Var mul_bcast(Tape<T>& t, Var x, Var v, Broadcast mode = Broadcast::Grouped);

/// a[M,K] * b[K,N].
template <typename T> Var matmul(Tape<T>& t, Var a, Var b);
/// x[R,in] * w[in,out] + bias[out]; bias may be invalid.
template <typename T> Var linear(Tape<T>& t, Var x, Var w, Var bias);

/// Row-wise normalization without affine parameters.
template <typename T> Var layernorm(Tape<T>& t, Var x, T eps);
/// Tanh-approximated GELU.
template <typename T> Var gelu(Tape<T>& t, Var x);
template <typename T> Var silu(Tape<T>& t, Var x);
template <typename T> Var softmax(Tape<T>& t, Var x);

/// Multi-head scaled dot-product attention. q is [B*Nq, H], k and v are
/// [B*Nk, H]. key_mask, when non-empty, has B*Nk entries (0 = masked key).
/// A query whose keys are all masked produces zeros.
template <typename T>
Var attention(Tape<T>& t, Var q, Var k, Var v, std::size_t batch, std::size_t heads,
              std::span<const std::uint8_t> key_mask = {});

template <typename T> Var concat_cols(Tape<T>& t, std::span<const Var> parts);
template <typename T> std::vector<Var> split_cols(Tape<T>& t, Var x, std::span<const std::size_t> widths);
/// Per-sample token concatenation: each part is [B*Ni, C], result [B*sum(Ni), C].
template <typename T> Var concat_tokens(Tape<T>& t, std::span<const Var> parts, std::size_t batch);
template <typename T> Var slice_tokens(Tape<T>& t, Var x, std::size_t batch, std::size_t start, std::size_t len);

template <typename T> Var reshape(Tape<T>& t, Var x, Shape shape);
template <typename T> Var transpose(Tape<T>& t, Var x);
/// out[i] = x[index[i]]; gradient scatters back.
template <typename T> Var gather(Tape<T>& t, Var x, std::span<const std::uint32_t> index, Shape out_shape);
/// Rows of table[V,C] selected by ids.
template <typename T> Var embedding(Tape<T>& t, Var table, std::span<const int> ids);

template <typename T> Var sum(Tape<T>& t, Var x);
template <typename T> Var mean(Tape<T>& t, Var x);
/// Mean of squared differences, scalar-shaped.
template <typename T> Var mse(Tape<T>& t, Var a, Var b);

}  // namespace op

}  // namespace dtlab
