#include <doctest.h>

#include <cmath>
#include <numeric>

#include "emd/error.hpp"
#include "emd/numerics/adam.hpp"
#include "emd/numerics/gradcheck.hpp"
#include "emd/numerics/kernels.hpp"
#include "emd/numerics/ops.hpp"
#include "helpers.hpp"

TEST_SUITE_BEGIN("numerics");

using namespace emd;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

// sum(op(x) * w) with a fixed random w, so every output element carries its own weight.
Tensor weighted_sum(Tape& tape, const Tensor& y, const Tensor& w) { return ops::sum(tape, ops::mul(tape, y, w)); }

double check_unary(const std::function<Tensor(Tape&, const Tensor&)>& op, Shape shape, std::uint64_t seed,
                   double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor x = random_tensor(shape, rng, lo, hi);
  Tape probe = Tape::inference();
  const Tensor y0 = op(probe, x);
  Tensor w = random_tensor(y0.shape(), rng);
  return grad_check([&](Tape& t) { return weighted_sum(t, op(t, x), w); }, x, {1e-3, 10, seed});
}

std::vector<double> naive_matmul(const std::vector<float>& a, const std::vector<float>& b, std::size_t m,
                                 std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t q = 0; q < k; ++q) c[i * n + j] += static_cast<double>(a[i * k + q]) * b[q * n + j];
  return c;
}

}  // namespace

TEST_CASE("matmul examples") {
  Tape t = Tape::inference();
  auto id = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor::from({2, 2}, {3, 4, 5, 6});
  auto c = ops::matmul(t, id, b);
  CHECK(std::vector<float>(c.data().begin(), c.data().end()) == std::vector<float>{3, 4, 5, 6});
  auto r = ops::matmul(t, Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
  CHECK(r.item() == 11.0f);
  CHECK_THROWS_AS(ops::matmul(t, Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("matmul matches a triple-loop oracle") {
  Rng rng(5);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  Tape t = Tape::inference();
  auto c = ops::matmul(t, a, b);
  const auto oracle = naive_matmul({a.data().begin(), a.data().end()}, {b.data().begin(), b.data().end()}, 3, 4, 2);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(c.data()[i] - oracle[i]) < 1e-6);
}

TEST_CASE("matmul is associative within tolerance") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng), c = random_tensor({5, 2}, rng);
    Tape t = Tape::inference();
    auto left = ops::matmul(t, ops::matmul(t, a, b), c);
    auto right = ops::matmul(t, a, ops::matmul(t, b, c));
    CHECK(max_abs_diff(left.data(), right.data()) < 1e-5);
  }
}

TEST_CASE("serial and OpenMP kernels agree bit for bit") {
  Rng rng(7);
  for (auto [m, n, k] : {std::tuple{3, 5, 7}, std::tuple{300, 64, 128}, std::tuple{257, 129, 65}}) {
    const auto mm = static_cast<std::size_t>(m), nn = static_cast<std::size_t>(n), kk = static_cast<std::size_t>(k);
    auto a = random_tensor({mm, kk}, rng), b = random_tensor({kk, nn}, rng), bt = random_tensor({nn, kk}, rng);
    auto at = random_tensor({kk, mm}, rng);
    std::vector<float> c1(mm * nn, 0.5f), c2(mm * nn, 0.5f);
    kernels::serial::gemm_nn(mm, nn, kk, a.data().data(), b.data().data(), c1.data(), true);
    kernels::omp::gemm_nn(mm, nn, kk, a.data().data(), b.data().data(), c2.data(), true);
    CHECK(c1 == c2);
    kernels::serial::gemm_nt(mm, nn, kk, a.data().data(), bt.data().data(), c1.data(), false);
    kernels::omp::gemm_nt(mm, nn, kk, a.data().data(), bt.data().data(), c2.data(), false);
    CHECK(c1 == c2);
    kernels::serial::gemm_tn(mm, nn, kk, at.data().data(), b.data().data(), c1.data(), false);
    kernels::omp::gemm_tn(mm, nn, kk, at.data().data(), b.data().data(), c2.data(), false);
    CHECK(c1 == c2);

    std::vector<unsigned char> allow(mm * nn);
    for (auto& v : allow) v = rng.below(4) != 0;
    std::vector<float> s1(mm * nn), s2(mm * nn);
    kernels::serial::softmax_rows(mm, nn, a.data().data(), allow.data(), s1.data());
    kernels::omp::softmax_rows(mm, nn, a.data().data(), allow.data(), s2.data());
    CHECK(s1 == s2);

    std::vector<float> gamma(kk, 1.5f), beta(kk, -0.25f), y1(mm * kk), y2(mm * kk), h1(mm * kk), h2(mm * kk),
        i1(mm), i2(mm);
    kernels::serial::layer_norm_rows(mm, kk, a.data().data(), gamma.data(), beta.data(), 1e-5f, y1.data(),
                                     h1.data(), i1.data());
    kernels::omp::layer_norm_rows(mm, kk, a.data().data(), gamma.data(), beta.data(), 1e-5f, y2.data(), h2.data(),
                                  i2.data());
    CHECK(y1 == y2);
    CHECK(h1 == h2);
    CHECK(i1 == i2);
  }
}

TEST_CASE("softmax examples") {
  Tape t = Tape::inference();
  auto s = ops::softmax(t, Tensor::from({3}, {0, 0, 0}), 0);
  for (float v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
  auto big = ops::softmax(t, Tensor::from({2}, {1000, 0}), 0);
  CHECK(std::abs(big.data()[0] - 1.0f) < 1e-6);
  CHECK(std::abs(big.data()[1]) < 1e-6);
  auto r = ops::softmax(t, Tensor::from({3}, {1, 2, 3}), 0);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(r.data()[i] - std::exp(i + 1.0) / z) < 1e-7);
}

TEST_CASE("softmax sums to one along the reduced axis") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor({4, 5, 6}, rng, -30.0, 30.0);
    Tape t = Tape::inference();
    for (std::size_t axis = 0; axis < 3; ++axis) {
      auto y = ops::softmax(t, x, axis);
      const std::size_t dims[3] = {4, 5, 6};
      std::size_t strides[3] = {30, 6, 1};
      for (std::size_t i = 0; i < 120; ++i) {
        if ((i / strides[axis]) % dims[axis] != 0) continue;
        double s = 0.0;
        for (std::size_t j = 0; j < dims[axis]; ++j) s += y.data()[i + j * strides[axis]];
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("masked softmax zeroes disallowed entries and empty rows") {
  Tape t = Tape::inference();
  const std::vector<std::uint8_t> allow{1, 0, 1, 0, 0, 0};
  auto y = ops::masked_softmax(t, Tensor::from({2, 3}, {1, 5, 1, 2, 3, 4}), allow);
  CHECK(y.data()[0] == doctest::Approx(0.5));
  CHECK(y.data()[1] == 0.0f);
  CHECK(y.data()[2] == doctest::Approx(0.5));
  for (int i = 3; i < 6; ++i) CHECK(y.data()[i] == 0.0f);
}

TEST_CASE("backward examples") {
  Rng rng(9);
  auto x = random_tensor({2, 3, 4}, rng, -1, 1, true);
  Tape t;
  auto loss = ops::sum(t, x);
  t.backward(loss);
  for (float g : x.grad()) CHECK(g == 1.0f);

  auto v = Tensor::from({3}, {1, 2, 3}, true);
  Tape t2;
  auto l2 = ops::sum(t2, ops::mul(t2, v, v));
  t2.backward(l2);
  CHECK(std::vector<float>(v.grad().begin(), v.grad().end()) == std::vector<float>{2, 4, 6});

  auto unused = Tensor::from({2}, {1, 1}, true);
  auto y = Tensor::from({2}, {3, 4}, true);
  Tape t3;
  auto l3 = ops::sum(t3, y);
  t3.backward(l3);
  CHECK(unused.grad()[0] == 0.0f);
  CHECK(unused.grad()[1] == 0.0f);

  Tape t4;
  auto nonscalar = ops::scale(t4, y, 2.0f);
  CHECK_THROWS_AS(t4.backward(nonscalar), ShapeError);
}

TEST_CASE("tape records in topological order") {
  Rng rng(10);
  auto a = random_tensor({2, 3}, rng, -1, 1, true), b = random_tensor({3, 2}, rng, -1, 1, true);
  Tape t;
  auto y = ops::sum(t, ops::relu(t, ops::matmul(t, a, b)));
  CHECK(t.size() == 3);
  CHECK(t.topologically_ordered());
  Tape inf = Tape::inference();
  (void)ops::matmul(inf, a, b);
  CHECK(inf.size() == 0);
}

TEST_CASE("ops are deterministic") {
  Rng r1(11), r2(11);
  auto a1 = random_tensor({5, 8}, r1), a2 = random_tensor({5, 8}, r2);
  Tape t1 = Tape::training(3), t2 = Tape::training(3);
  auto y1 = ops::dropout(t1, ops::gelu(t1, a1), 0.3f);
  auto y2 = ops::dropout(t2, ops::gelu(t2, a2), 0.3f);
  CHECK(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
}

TEST_CASE("dropout is identity at inference and scales kept units in training") {
  Rng rng(12);
  auto x = random_tensor({1000}, rng, 1, 2);
  Tape inf = Tape::inference();
  auto same = ops::dropout(inf, x, 0.3f);
  CHECK(std::equal(same.data().begin(), same.data().end(), x.data().begin()));
  Tape tr = Tape::training(4);
  auto d = ops::dropout(tr, x, 0.3f);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    if (d.data()[i] == 0.0f) ++zeros;
    else CHECK(d.data()[i] == doctest::Approx(x.data()[i] / 0.7f));
  }
  CHECK(zeros > 230);
  CHECK(zeros < 370);
}

TEST_CASE("grad_check contract") {
  Rng rng(13);
  auto x = random_tensor({3, 4}, rng);
  CHECK(grad_check([&](Tape& t) { return ops::sum(t, x); }, x) < 1e-6);
  CHECK_THROWS_AS(grad_check([&](Tape& t) { return ops::scale(t, x, 1.0f); }, x), ShapeError);
  CHECK_THROWS_AS(grad_check([&](Tape& t) { return ops::sum(t, x); }, x, {1e-1}), ConfigError);

  // BCE of sigmoid(w . x)
  auto w = random_tensor({1, 6}, rng), in = random_tensor({6, 4}, rng);
  const std::vector<float> labels{1, 0, 1, 1};
  auto f = [&](Tape& t) {
    return ops::bce(t, ops::reshape(t, ops::sigmoid(t, ops::matmul(t, w, in)), {4}), labels);
  };
  CHECK(grad_check(f, w) < 1e-3);
  CHECK(grad_check(f, in) < 1e-3);
}

TEST_CASE("every differentiable op passes finite differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    CAPTURE(seed);
    Rng rng(seed * 101);
    auto other = random_tensor({4, 3}, rng);
    auto other3 = random_tensor({2, 4, 3}, rng);
    auto bias = random_tensor({3}, rng);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::matmul(t, x, other); }, {2, 4}, seed) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::matmul(t, other3, x); }, {3, 5}, seed) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::bmm(t, x, other3); }, {2, 3, 4}, seed) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::bmm(t, other3, x, true); }, {2, 5, 3}, seed) <
          1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::add(t, x, other); }, {4, 3}, seed) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::mul(t, x, x); }, {4, 3}, seed) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::add_bias(t, other3, x); }, {3}, seed) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::add_bias(t, x, bias); }, {2, 4, 3}, seed) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::scale(t, x, -1.7f); }, {5}, seed) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::relu(t, x); }, {20}, seed, 0.05, 1.0) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::relu(t, x); }, {20}, seed, -1.0, -0.05) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::gelu(t, x); }, {20}, seed, -3, 3) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::sigmoid(t, x); }, {20}, seed, -4, 4) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::tanh(t, x); }, {20}, seed, -2, 2) < 1e-3);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::softmax(t, x, axis); }, {2, 3, 4}, seed, -2, 2) <
            1e-3);
    }
    std::vector<std::uint8_t> allow(12);
    for (std::size_t i = 0; i < 12; ++i) allow[i] = (i % 4 == 3 || i >= 8) ? 0 : 1;
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::masked_softmax(t, x, allow); }, {3, 4}, seed) <
          1e-3);
    auto gamma = random_tensor({6}, rng, 0.5, 1.5), beta = random_tensor({6}, rng);
    auto ln_x = random_tensor({3, 6}, rng, -2, 2);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::layer_norm(t, x, gamma, beta); }, {3, 6}, seed,
                      -2, 2) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& g) { return ops::layer_norm(t, ln_x, g, beta); }, {6}, seed) <
          1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& b) { return ops::layer_norm(t, ln_x, gamma, b); }, {6}, seed) <
          1e-3);
    const std::vector<std::int32_t> ids{2, 0, 2, 4};
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::embedding(t, x, ids); }, {5, 3}, seed) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::reshape(t, x, {6, 2}); }, {3, 4}, seed) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::permute_0213(t, x); }, {2, 3, 4, 2}, seed) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::concat_last(t, x, other3); }, {2, 4, 2}, seed) <
          1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::concat_last(t, other3, x); }, {2, 4, 5}, seed) <
          1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::mean(t, x); }, {2, 4, 5}, seed) < 1e-3);
    const std::vector<std::uint8_t> mask{1, 1, 1, 0, 1, 1, 0, 0};
    const std::vector<std::size_t> pos{2, 1};
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::mask_positions(t, x, mask); }, {2, 4, 3}, seed) <
          1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::select_positions(t, x, pos); }, {2, 4, 3}, seed) <
          1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::sum_positions(t, x); }, {2, 4, 3}, seed) < 1e-3);
    CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::max_positions(t, x, mask); }, {2, 4, 3}, seed) <
          1e-3);
    for (std::size_t width : {1u, 3u, 5u}) {
      CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::unfold_positions(t, x, width); }, {2, 4, 3},
                        seed) < 1e-3);
    }
    const std::vector<std::int32_t> targets{1, 4, 0, 2};
    const std::vector<float> weights{1, 0, 1, 1};
    CHECK(grad_check(
              [&](Tape& t) {
                return ops::cross_entropy(t, ops::reshape(t, ops::scale(t, other3, 2.0f), {8, 3}),
                                          std::vector<std::int32_t>{0, 1, 2, 0, 1, 2, 2, 1},
                                          std::vector<float>(8, 1.0f));
              },
              other3) < 1e-3);
    auto logits = random_tensor({4, 5}, rng, -2, 2);
    CHECK(grad_check([&](Tape& t) { return ops::cross_entropy(t, logits, targets, weights); }, logits) < 1e-3);
    auto probs = random_tensor({6}, rng, 0.05, 0.95);
    const std::vector<float> labels{1, 0, 0, 1, 1, 0};
    CHECK(grad_check([&](Tape& t) { return ops::bce(t, probs, labels); }, probs, {1e-4}) < 1e-3);

    const std::vector<std::size_t> lengths{4, 2};
    auto u3 = random_tensor({3, 9}, rng, -0.5, 0.5), u4 = random_tensor({3, 12}, rng, -0.5, 0.5);
    auto xg = random_tensor({2, 4, 9}, rng), xl = random_tensor({2, 4, 12}, rng);
    for (bool reverse : {false, true}) {
      CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::gru_sequence(t, x, u3, lengths, reverse); },
                        {2, 4, 9}, seed) < 1e-3);
      CHECK(check_unary([&](Tape& t, const Tensor& u) { return ops::gru_sequence(t, xg, u, lengths, reverse); },
                        {3, 9}, seed, -0.5, 0.5) < 1e-3);
      CHECK(check_unary([&](Tape& t, const Tensor& x) { return ops::lstm_sequence(t, x, u4, lengths, reverse); },
                        {2, 4, 12}, seed) < 1e-3);
      CHECK(check_unary([&](Tape& t, const Tensor& u) { return ops::lstm_sequence(t, xl, u, lengths, reverse); },
                        {3, 12}, seed, -0.5, 0.5) < 1e-3);
    }
  }
}

TEST_CASE("bce closed forms") {
  Tape t = Tape::inference();
  const std::vector<float> y{1, 0, 1};
  CHECK(ops::bce(t, Tensor::from({3}, {1, 0, 1}), y).item() <= 1e-6);
  CHECK(ops::bce(t, Tensor::from({3}, {0.5f, 0.5f, 0.5f}), y).item() == doctest::Approx(std::log(2.0)));
}

TEST_CASE("adam examples") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<Tensor> p{Tensor::from({3}, {1, 2, 3}, true)};
    AdamState s;
    adam_step(p, s);
    CHECK(std::vector<float>(p[0].data().begin(), p[0].data().end()) == std::vector<float>{1, 2, 3});
  }
  SUBCASE("first bias-corrected step moves by lr") {
    std::vector<Tensor> p{Tensor::from({1}, {0}, true)};
    p[0].grad()[0] = 1.0f;
    AdamState s;
    s.lr = 0.1;
    adam_step(p, s);
    // m_hat = 1, v_hat = 1 -> update = lr * 1 / (1 + eps)
    const double expected = -0.1 / (1.0 + 1e-8);
    CHECK(std::abs(p[0].data()[0] - expected) < 1e-7);
    CHECK(s.step == 1);
  }
  SUBCASE("two identical steps move monotonically against the gradient") {
    std::vector<Tensor> p{Tensor::from({2}, {0.5f, 0.5f}, true)};
    AdamState s;
    p[0].grad()[0] = 2.0f;
    p[0].grad()[1] = -3.0f;
    adam_step(p, s);
    const float a1 = p[0].data()[0], b1 = p[0].data()[1];
    adam_step(p, s);
    CHECK(s.step == 2);
    CHECK(a1 < 0.5f);
    CHECK(p[0].data()[0] < a1);
    CHECK(b1 > 0.5f);
    CHECK(p[0].data()[1] > b1);
  }
  SUBCASE("shape mismatch") {
    std::vector<Tensor> p{Tensor::from({2}, {0, 0}, true)};
    AdamState s;
    adam_step(p, s);
    std::vector<Tensor> q{Tensor::from({3}, {0, 0, 0}, true)};
    CHECK_THROWS_AS(adam_step(q, s), ShapeError);
  }
}

TEST_CASE("clip_grad_norm bounds the joint norm") {
  std::vector<Tensor> p{Tensor::from({2}, {0, 0}, true), Tensor::from({1}, {0}, true)};
  p[0].grad()[0] = 3.0f;
  p[0].grad()[1] = 0.0f;
  p[1].grad()[0] = 4.0f;
  CHECK(clip_grad_norm(p, 1.0) == doctest::Approx(5.0));
  CHECK(p[0].grad()[0] == doctest::Approx(0.6));
  CHECK(p[1].grad()[0] == doctest::Approx(0.8));
}
TEST_SUITE_END();
