#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "dtlab/autodiff.hpp"
#include "dtlab/grad_check.hpp"
#include "dtlab/kernels.hpp"
#include "dtlab/random.hpp"
#include "dtlab/tensor.hpp"

using namespace dtlab;

namespace {

std::vector<float> random_vec(Rng& rng, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

// Restores the default kernel table when a test forces one.
struct IsaGuard {
  kernels::Isa saved = kernels::active().isa;
  ~IsaGuard() { kernels::select(saved); }
};

double max_rel(const std::vector<float>& a, const std::vector<double>& ref) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - ref[i]) / std::max(1.0, std::abs(ref[i])));
  }
  return worst;
}

}  // namespace

TEST_CASE("scalar is always available and selected when forced") {
  IsaGuard guard;
  CHECK(kernels::isa_available(kernels::Isa::Scalar));
  kernels::select(kernels::Isa::Scalar);
  CHECK(kernels::active().isa == kernels::Isa::Scalar);
}

TEST_CASE("every available ISA matches the double-precision reference gemm") {
  Rng rng(7);
  // Odd sizes exercise every remainder path of the vector loops.
  const std::size_t shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {17, 33, 9}, {64, 48, 32}, {5, 70, 129}};
  for (auto isa : kernels::available_isas()) {
    const auto& kt = kernels::table(isa);
    CAPTURE(kernels::isa_name(isa));
    for (const auto& s : shapes) {
      const std::size_t m = s[0], n = s[1], k = s[2];
      const auto a = random_vec(rng, m * k), b = random_vec(rng, k * n), bt = random_vec(rng, n * k),
                 at = random_vec(rng, k * m);
      std::vector<double> ad(a.begin(), a.end()), bd(b.begin(), b.end()), btd(bt.begin(), bt.end()),
          atd(at.begin(), at.end());

      std::vector<float> c(m * n, 0.5f);
      std::vector<double> ref(m * n, 0.5);
      kt.gemm_nn(m, n, k, a.data(), b.data(), c.data());
      kernels::scalar::gemm_nn(m, n, k, ad.data(), bd.data(), ref.data());
      CHECK(max_rel(c, ref) < 1e-5);

      std::fill(c.begin(), c.end(), 0.5f);
      std::fill(ref.begin(), ref.end(), 0.5);
      kt.gemm_nt(m, n, k, a.data(), bt.data(), c.data());
      kernels::scalar::gemm_nt(m, n, k, ad.data(), btd.data(), ref.data());
      CHECK(max_rel(c, ref) < 1e-5);

      std::fill(c.begin(), c.end(), 0.5f);
      std::fill(ref.begin(), ref.end(), 0.5);
      kt.gemm_tn(m, n, k, at.data(), b.data(), c.data());
      kernels::scalar::gemm_tn(m, n, k, atd.data(), bd.data(), ref.data());
      CHECK(max_rel(c, ref) < 1e-5);
    }
  }
}

TEST_CASE("SIMD dot and axpy agree with the scalar reference") {
  Rng rng(11);
  for (auto isa : kernels::available_isas()) {
    const auto& kt = kernels::table(isa);
    for (std::size_t n : {0u, 1u, 7u, 8u, 31u, 1000u}) {
      const auto x = random_vec(rng, n), y = random_vec(rng, n);
      const float d = kt.dot(n, x.data(), y.data());
      const float ref = kernels::scalar::dot(n, x.data(), y.data());
      CHECK(std::abs(d - ref) <= 1e-4f * std::max(1.0f, std::abs(ref)));
      auto ya = y, yr = y;
      kt.axpy(n, 0.75f, x.data(), ya.data());
      kernels::scalar::axpy(n, 0.75f, x.data(), yr.data());
      for (std::size_t i = 0; i < n; ++i) CHECK(ya[i] == doctest::Approx(yr[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("a gemm row does not depend on the other rows in the call") {
  Rng rng(3);
  const std::size_t m = 9, n = 21, k = 37;
  const auto a = random_vec(rng, m * k), b = random_vec(rng, k * n);
  for (auto isa : kernels::available_isas()) {
    const auto& kt = kernels::table(isa);
    std::vector<float> full(m * n, 0.0f);
    kt.gemm_nn(m, n, k, a.data(), b.data(), full.data());
    for (std::size_t r = 0; r < m; ++r) {
      std::vector<float> one(n, 0.0f);
      kt.gemm_nn(1, n, k, a.data() + r * k, b.data(), one.data());
      for (std::size_t j = 0; j < n; ++j) CHECK(one[j] == full[r * n + j]);
    }
  }
}

TEST_CASE("unavailable ISAs are rejected") {
  for (auto isa : {kernels::Isa::Avx2, kernels::Isa::Neon}) {
    if (!kernels::isa_available(isa)) CHECK_THROWS(kernels::table(isa));
  }
}

TEST_CASE("tensor shape errors carry both shapes") {
  Tensor<float> t({2, 3});
  try {
    (void)t.reshaped({4, 2});
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2") != std::string::npos);
    CHECK(msg.find("4") != std::string::npos);
  }
  CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST_CASE("tensor binary round trip") {
  Rng rng(5);
  const auto t = rng.normal_tensor<float>({2, 3, 4});
  std::stringstream ss;
  write_tensor(ss, t);
  CHECK(read_tensor(ss) == t);
}

TEST_CASE("matmul forward and backward on a small example") {
  Tape<double> tape;
  Var a = tape.variable(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  Var b = tape.variable(Tensor<double>({2, 2}, {5, 6, 7, 8}));
  Var c = op::matmul(tape, a, b);
  CHECK(tape.value(c).storage() == std::vector<double>{19, 22, 43, 50});
  tape.backward(op::sum(tape, c));
  // d sum(AB)/dA = 1 B^T, d/dB = A^T 1.
  CHECK(tape.grad(a).storage() == std::vector<double>{11, 15, 11, 15});
  CHECK(tape.grad(b).storage() == std::vector<double>{4, 4, 6, 6});
}

TEST_CASE("a node used twice accumulates both gradient paths") {
  Tape<double> tape;
  Var x = tape.variable(Tensor<double>({1, 3}, {1, -2, 3}));
  Var y = op::mul(tape, x, x);
  tape.backward(op::sum(tape, y));
  CHECK(tape.grad(x).storage() == std::vector<double>{2, -4, 6});
}

TEST_CASE("second backward without reset throws") {
  Tape<double> tape;
  Var x = tape.variable(Tensor<double>({1, 1}, {2.0}));
  Var l = op::sum(tape, op::mul(tape, x, x));
  tape.backward(l);
  CHECK_THROWS(tape.backward(l));
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  Rng rng(9);
  auto x = rng.normal_tensor<double>({4, 7}, 3.0);
  auto shifted = x;
  for (auto& v : shifted.values()) v += 100.0;
  Tape<double> tape;
  const auto p = tape.value(op::softmax(tape, tape.constant(x)));
  const auto q = tape.value(op::softmax(tape, tape.constant(shifted)));
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      s += p.at(r, c);
      CHECK(p.at(r, c) == doctest::Approx(q.at(r, c)).epsilon(1e-12));
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("attention with a fully masked sample yields zeros") {
  Rng rng(2);
  Tape<double> tape;
  const std::size_t b = 2, n = 3, h = 4;
  Var q = tape.constant(rng.normal_tensor<double>({b * n, h}));
  Var k = tape.constant(rng.normal_tensor<double>({b * n, h}));
  Var v = tape.constant(rng.normal_tensor<double>({b * n, h}));
  const std::vector<std::uint8_t> mask{1, 1, 1, 0, 0, 0};
  const auto out = tape.value(op::attention(tape, q, k, v, b, 2, mask));
  for (std::size_t r = n; r < 2 * n; ++r) {
    for (std::size_t c = 0; c < h; ++c) CHECK(out.at(r, c) == 0.0);
  }
}

TEST_CASE("tape counts linear and attention MACs") {
  Tape<double> tape;
  Var x = tape.constant(Tensor<double>({5, 3}, 1.0));
  Var w = tape.constant(Tensor<double>({3, 4}, 1.0));
  (void)op::linear(tape, x, w, Var{});
  CHECK(tape.macs().projection == 5u * 3u * 4u);
  Var q = tape.constant(Tensor<double>({6, 4}, 0.1));
  (void)op::attention(tape, q, q, q, 2, 2);
  // Per sample: QK^T and PV each N*N*H = 3*3*4.
  CHECK(tape.macs().attention == 2u * 2u * 3u * 3u * 4u);
}

// ---------------------------------------------------------------------------
// Gradient check.

namespace {

ParameterSet<double> toy_params(std::uint64_t seed) {
  Rng rng(seed);
  ParameterSet<double> ps;
  ps.add("w1", rng.normal_tensor<double>({4, 6}, 0.5));
  ps.add("b1", rng.normal_tensor<double>({6}, 0.1));
  ps.add("g", rng.normal_tensor<double>({1, 6}, 0.5));
  ps.add("w2", rng.normal_tensor<double>({6, 3}, 0.5));
  return ps;
}

Var toy_loss(Tape<double>& t, ParameterSet<double>& ps, const Tensor<double>& x, const Tensor<double>& y) {
  Var h = op::linear(t, t.constant(x), t.parameter(ps[0]), t.parameter(ps[1]));
  h = op::layernorm(t, op::gelu(t, h), 1e-6);
  h = op::mul_bcast(t, h, t.parameter(ps[2]), Broadcast::Tiled);
  h = op::silu(t, h);
  Var out = op::softmax(t, op::matmul(t, h, t.parameter(ps[3])));
  return op::mse(t, out, t.constant(y));
}

}  // namespace

TEST_CASE("grad_check passes on a single linear layer at 1e-5") {
  Rng rng(1);
  ParameterSet<double> ps;
  ps.add("w", rng.normal_tensor<double>({3, 2}));
  ps.add("b", rng.normal_tensor<double>({2}));
  const auto x = rng.normal_tensor<double>({4, 3});
  GradCheckOptions opt;
  opt.tolerance = 1e-5;
  const auto rep = grad_check(
      ps,
      [&](Tape<double>& t) {
        Var y = op::linear(t, t.constant(x), t.parameter(ps[0]), t.parameter(ps[1]));
        return op::sum(t, op::mul(t, y, y));
      },
      opt);
  CHECK(rep.passed);
  CHECK(rep.max_rel_error < 1e-5);
}

TEST_CASE("grad_check passes on a random three-layer block") {
  auto ps = toy_params(4);
  Rng rng(8);
  const auto x = rng.normal_tensor<double>({5, 4});
  const auto y = rng.normal_tensor<double>({5, 3});
  const auto before = ps[0].value;
  const auto rep = grad_check(ps, [&](Tape<double>& t) { return toy_loss(t, ps, x, y); });
  CHECK(rep.passed);
  CHECK(rep.max_rel_error < 1e-3);
  CHECK(rep.entries.size() == 4);
  CHECK(ps[0].value == before);  // values restored
}

TEST_CASE("grad_check catches a corrupted backward") {
  Rng rng(1);
  ParameterSet<double> ps;
  ps.add("w", rng.normal_tensor<double>({3, 3}));
  const auto x = rng.normal_tensor<double>({2, 3});
  const auto rep = grad_check(ps, [&](Tape<double>& t) {
    Var y = op::matmul(t, t.constant(x), t.parameter(ps[0]));
    // Square with a backward that is off by a factor of two.
    Tensor<double> sq = t.value(y);
    for (auto& e : sq.values()) e = e * e;
    Var s = t.record(std::move(sq), true, [y](Tape<double>& tp, const Tensor<double>& g, const Tensor<double>&) {
      const auto& yv = tp.value(y);
      auto& acc = tp.grad_accumulator(y);
      for (std::size_t i = 0; i < yv.size(); ++i) acc[i] += g[i] * 4.0 * yv[i];
    });
    return op::sum(t, s);
  });
  CHECK_FALSE(rep.passed);
  CHECK(rep.max_rel_error > 0.1);
}

TEST_CASE("frozen parameters are skipped by grad_check") {
  auto ps = toy_params(4);
  ps[3].trainable = false;
  Rng rng(8);
  const auto x = rng.normal_tensor<double>({5, 4});
  const auto y = rng.normal_tensor<double>({5, 3});
  const auto rep = grad_check(ps, [&](Tape<double>& t) { return toy_loss(t, ps, x, y); });
  CHECK(rep.entries.size() == 3);
}
