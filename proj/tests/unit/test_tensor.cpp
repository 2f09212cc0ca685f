#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "protlang/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace protlang;
using testsupport::check_gradients;

namespace {

Tensor<double> rand_tensor(std::vector<std::size_t> shape, Rng& rng, bool rg = true) {
  return Tensor<double>::randn(std::move(shape), 1.0, rng, rg);
}

bool same_bytes(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("tensor construction and validation") {
  auto t = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.numel() == 6);
  CHECK(t.data()[4] == 5.0);

  CHECK_THROWS_AS(Tensor<double>::zeros({0, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>::zeros({}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>::from_data({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>::from_data({1}, {std::nan("")}), NumericError);
  CHECK_THROWS_AS(Tensor<double>::scalar(1.0).rows(), ShapeError);
  CHECK(Tensor<double>::scalar(4.5).item() == 4.5);
  CHECK_THROWS_AS(Tensor<double>::zeros({2, 2}).item(), ContractError);
}

TEST_CASE("elementwise arithmetic values") {
  auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from_data({2, 2}, {10, 20, 30, 40});
  CHECK(add(a, b).data()[3] == 44.0);
  CHECK(sub(b, a).data()[0] == 9.0);
  CHECK(mul(a, b).data()[2] == 90.0);
  CHECK(scale(a, -2.0).data()[1] == -4.0);
  auto v = Tensor<double>::from_data({1, 2}, {100, 200});
  auto r = add_rowvec(a, v);
  CHECK(r.data()[0] == 101.0);
  CHECK(r.data()[3] == 204.0);
  CHECK_THROWS_AS(add(a, Tensor<double>::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(add_rowvec(a, Tensor<double>::zeros({1, 3})), ShapeError);
}

TEST_CASE("matmul against naive oracle") {
  Rng rng(11);
  auto a = rand_tensor({7, 5}, rng, false);
  auto b = rand_tensor({5, 3}, rng, false);
  auto c = matmul(a, b);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 5; ++k) s += a.data()[i * 5 + k] * b.data()[k * 3 + j];
      CHECK(c.data()[i * 3 + j] == doctest::Approx(s).epsilon(1e-12));
    }
  CHECK_THROWS_AS(matmul(a, Tensor<double>::zeros({4, 2})), ShapeError);
}

TEST_CASE("transpose and slicing") {
  auto a = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto t = transpose(a);
  CHECK(t.shape() == std::vector<std::size_t>{3, 2});
  CHECK(t.data()[2] == 2.0);
  auto tt = transpose(t);
  CHECK(same_bytes(tt.data(), a.data()));

  auto r = slice_rows(a, 1, 1);
  CHECK(r.data()[0] == 4.0);
  auto c = slice_cols(a, 1, 2);
  CHECK(c.data()[0] == 2.0);
  CHECK(c.data()[3] == 6.0);
  CHECK_THROWS_AS(slice_rows(a, 1, 2), ShapeError);
  CHECK_THROWS_AS(slice_cols(a, 3, 1), ShapeError);

  auto cat = concat_rows<double>({a, r});
  CHECK(cat.rows() == 3);
  CHECK(cat.data()[8] == 6.0);
  auto catc = concat_cols<double>({a, c});
  CHECK(catc.cols() == 5);
  CHECK(catc.data()[4] == 3.0);
  CHECK_THROWS_AS(concat_rows<double>({a, c}), ShapeError);
}

TEST_CASE("embed_rows gathers and accumulates repeated ids") {
  auto table = Tensor<double>::from_data({3, 2}, {0, 1, 10, 11, 20, 21}, true);
  std::vector<int> ids = {2, 0, 2};
  auto e = embed_rows(table, std::span<const int>(ids));
  CHECK(e.rows() == 3);
  CHECK(e.data()[0] == 20.0);
  CHECK(e.data()[2] == 0.0);
  auto loss = sum_all(e);
  backward(loss);
  // row 2 used twice, row 1 never
  CHECK(table.grad()[2 * 2] == 2.0);
  CHECK(table.grad()[1 * 2] == 0.0);
  CHECK(table.grad()[0] == 1.0);
  std::vector<int> bad = {3};
  CHECK_THROWS_AS(embed_rows(table, std::span<const int>(bad)), ContractError);
}

TEST_CASE("softmax rows: values and stability") {
  auto u = softmax_rows(Tensor<double>::from_data({1, 4}, {0.5, 0.5, 0.5, 0.5}));
  for (double p : u.data()) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));
  // large logits must not overflow
  auto big = softmax_rows(Tensor<double>::from_data({1, 2}, {1000.0, 0.0}));
  CHECK(big.data()[0] == doctest::Approx(1.0));
  Rng rng(3);
  auto x = rand_tensor({3, 5}, rng);
  auto sm = softmax_rows(x);
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 5; ++j) s += sm.data()[i * 5 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("masked softmax: exact zeros and zero influence") {
  Rng rng(5);
  auto x = rand_tensor({2, 4}, rng, false);
  std::vector<std::uint8_t> allowed = {1, 0, 1, 0, 0, 1, 1, 1};
  auto p = masked_softmax_rows(x, allowed);
  CHECK(p.data()[1] == 0.0);
  CHECK(p.data()[3] == 0.0);
  CHECK(p.data()[4] == 0.0);
  CHECK(p.data()[0] + p.data()[2] == doctest::Approx(1.0).epsilon(1e-12));

  // perturbing a masked-out logit changes nothing, bit for bit
  auto x2 = x.detach();
  x2.raw()[1] += 1e6;
  x2.raw()[3] -= 123.0;
  auto p2 = masked_softmax_rows(x2, allowed);
  CHECK(same_bytes(p.data(), p2.data()));

  std::vector<std::uint8_t> empty_row = {0, 0, 0, 0, 1, 1, 1, 1};
  CHECK_THROWS_AS(masked_softmax_rows(x, empty_row), ContractError);
  CHECK_THROWS_AS(masked_softmax_rows(x, std::vector<std::uint8_t>{1, 1}), ShapeError);
}

TEST_CASE("layer_norm constant row is exactly bias") {
  auto x = Tensor<double>::from_data({2, 3}, {0.1, 0.1, 0.1, 1.0, 2.0, 3.0});
  auto g = Tensor<double>::full({1, 3}, 1.0);
  auto b = Tensor<double>::zeros({1, 3});
  auto y = layer_norm(x, g, b);
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == 0.0);
  // non-constant row: mean ~0, variance ~1
  double mu = (y.data()[3] + y.data()[4] + y.data()[5]) / 3.0;
  CHECK(mu == doctest::Approx(0.0).epsilon(1e-9));
  CHECK_THROWS_AS(layer_norm(x, Tensor<double>::zeros({1, 2}), b), ShapeError);
}

TEST_CASE("l2_normalize_rows handles zero rows") {
  auto x = Tensor<double>::from_data({2, 3}, {3, 0, 4, 0, 0, 0});
  auto y = l2_normalize_rows(x);
  CHECK(y.data()[0] == doctest::Approx(0.6));
  CHECK(y.data()[2] == doctest::Approx(0.8));
  CHECK(y.data()[3] == 0.0);
  CHECK(y.data()[5] == 0.0);
}

TEST_CASE("row_max routes gradient to first maximum") {
  auto x = Tensor<double>::from_data({1, 4}, {1.0, 7.0, 7.0, 2.0}, true);
  auto m = row_max(x);
  CHECK(m.item() == 7.0);
  backward(sum_all(m));
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("weighted_sum_rows equals matmul but skips zero weights bitwise") {
  Rng rng(41);
  auto w = rand_tensor({3, 4}, rng, false);
  auto v = rand_tensor({4, 5}, rng, false);
  auto a = weighted_sum_rows(w, v);
  auto b = matmul(w, v);
  for (std::size_t i = 0; i < a.numel(); ++i)
    CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));

  // zero out one weight; the matching row of v becomes invisible
  auto wz = w.detach();
  wz.raw()[2] = 0.0;  // row 0 weight for v-row 2
  auto base = weighted_sum_rows(wz, v);
  auto v2 = v.detach();
  v2.raw()[2 * 5 + 0] = 1e18;
  v2.raw()[2 * 5 + 4] = -1e18;
  auto poked = weighted_sum_rows(wz, v2);
  for (std::size_t j = 0; j < 5; ++j) CHECK(base.data()[j] == poked.data()[j]);
  CHECK_THROWS_AS(weighted_sum_rows(w, Tensor<double>::zeros({3, 5})), ShapeError);
}

TEST_CASE("reductions") {
  auto x = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(sum_all(x).item() == 10.0);
  CHECK(mean_all(x).item() == 2.5);
  auto mr = mean_rows(x);
  CHECK(mr.data()[0] == 2.0);
  CHECK(mr.data()[1] == 3.0);
}

TEST_CASE("cross entropy anchors") {
  auto uniform = Tensor<double>::zeros({1, 4});
  std::vector<int> t0 = {2};
  CHECK(cross_entropy_logits(uniform, std::span<const int>(t0)).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  auto onehot = Tensor<double>::from_data({1, 4}, {20.0, 0.0, 0.0, 0.0});
  std::vector<int> t1 = {0};
  CHECK(cross_entropy_logits(onehot, std::span<const int>(t1)).item() ==
        doctest::Approx(0.0).epsilon(1e-8));

  // ignored rows do not contribute to the mean
  auto two = Tensor<double>::from_data({2, 2}, {0.0, 0.0, 50.0, -50.0});
  std::vector<int> t2 = {0, -1};
  CHECK(cross_entropy_logits(two, std::span<const int>(t2), -1).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  std::vector<int> bad = {4};
  CHECK_THROWS_AS(cross_entropy_logits(uniform, std::span<const int>(bad)), ContractError);
  std::vector<int> all_ignored = {-1};
  CHECK_THROWS_AS(cross_entropy_logits(uniform, std::span<const int>(all_ignored), -1),
                  ContractError);
}

TEST_CASE("bce_with_logits anchors") {
  auto z = Tensor<double>::zeros({1, 2});
  CHECK(bce_with_logits(z, {1.0, 0.0}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  auto big = Tensor<double>::from_data({1, 1}, {30.0});
  CHECK(bce_with_logits(big, {1.0}).item() == doctest::Approx(0.0).epsilon(1e-9));
  CHECK_THROWS_AS(bce_with_logits(z, {2.0, 0.0}), ContractError);
  CHECK_THROWS_AS(bce_with_logits(z, {1.0}), ShapeError);
}

TEST_CASE("unfold_rows lays out taps as [tap][channel]") {
  auto x = Tensor<double>::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  auto u = unfold_rows(x, 3);
  CHECK(u.shape() == std::vector<std::size_t>{3, 6});
  // row 0: pad, row0, row1
  const double want0[6] = {0, 0, 1, 2, 3, 4};
  for (int j = 0; j < 6; ++j) CHECK(u.data()[j] == want0[j]);
  // row 2: row1, row2, pad
  const double want2[6] = {3, 4, 5, 6, 0, 0};
  for (int j = 0; j < 6; ++j) CHECK(u.data()[12 + j] == want2[j]);
  CHECK_THROWS_AS(unfold_rows(x, 2), ContractError);
}

TEST_CASE("adaptive_avg_pool_rows matches window oracle") {
  Rng rng(17);
  for (std::size_t n : {1ul, 3ul, 7ul, 32ul})
    for (std::size_t out : {1ul, 2ul, 5ul, 32ul}) {
      auto x = rand_tensor({n, 3}, rng, false);
      auto y = adaptive_avg_pool_rows(x, out);
      REQUIRE(y.rows() == out);
      for (std::size_t i = 0; i < out; ++i) {
        const std::size_t lo = (i * n) / out;
        const std::size_t hi = ((i + 1) * n + out - 1) / out;
        for (std::size_t j = 0; j < 3; ++j) {
          double s = 0;
          for (std::size_t r = lo; r < hi; ++r) s += x.data()[r * 3 + j];
          CHECK(y.data()[i * 3 + j] == doctest::Approx(s / (hi - lo)).epsilon(1e-12));
        }
      }
    }
}

TEST_CASE("non-finite results are rejected") {
  auto huge = Tensor<double>::from_data({1, 1}, {1e308});
  CHECK_THROWS_AS(scale(huge, 1e10), NumericError);
  CHECK_THROWS_AS(mul(huge, huge), NumericError);
}

TEST_CASE("tape: single use, scalar root, replay identity") {
  Rng rng(23);
  auto w = rand_tensor({3, 3}, rng);
  auto x = rand_tensor({2, 3}, rng, false);
  auto y = gelu(matmul(x, w));
  auto loss = mean_all(y);
  Tape<double> tape(loss);
  tape.backward();
  CHECK_THROWS_AS(tape.backward(), ContractError);
  CHECK_THROWS_AS(backward(y), ContractError);  // non-scalar root

  std::vector<double> y_before(y.data().begin(), y.data().end());
  std::vector<double> loss_before(loss.data().begin(), loss.data().end());
  tape.replay_forward();
  CHECK(same_bytes(y.data(), std::span<const double>(y_before)));
  CHECK(same_bytes(loss.data(), std::span<const double>(loss_before)));
}

TEST_CASE("detach blocks gradient flow") {
  auto w = Tensor<double>::from_data({1, 1}, {2.0}, true);
  auto d = scale(w, 3.0).detach();
  CHECK_FALSE(d.requires_grad());
  auto loss = sum_all(mul(d, d));
  Tape<double> tape(loss);
  tape.backward();
  CHECK(w.grad().empty());
}

TEST_CASE("finite-difference gradients for every op") {
  Rng rng(31);
  auto p = rand_tensor({3, 4}, rng);
  auto q = rand_tensor({3, 4}, rng);
  auto w = rand_tensor({4, 2}, rng);
  auto v = rand_tensor({1, 4}, rng);
  auto g = rand_tensor({1, 4}, rng);
  auto b = rand_tensor({1, 4}, rng);
  auto table = rand_tensor({5, 3}, rng);
  std::vector<int> ids = {4, 1, 1, 0};
  std::vector<int> targets = {1, -1, 0};
  std::vector<double> bce_t = {1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 1, 0};
  std::vector<std::uint8_t> allowed = {1, 0, 1, 1, 0, 1, 1, 1, 1, 1, 1, 0};

  struct Case {
    const char* name;
    std::function<Tensor<double>()> build;
  };
  const std::vector<Case> cases = {
      {"add", [&] { return mean_all(add(p, q)); }},
      {"sub", [&] { return mean_all(mul(sub(p, q), p)); }},
      {"mul", [&] { return mean_all(mul(p, q)); }},
      {"scale", [&] { return mean_all(scale(p, -1.7)); }},
      {"add_rowvec", [&] { return mean_all(mul(add_rowvec(p, v), p)); }},
      {"matmul", [&] { return mean_all(matmul(p, w)); }},
      {"transpose", [&] { return mean_all(mul(transpose(p), transpose(q))); }},
      {"slice_rows", [&] { return mean_all(slice_rows(p, 1, 2)); }},
      {"slice_cols", [&] { return mean_all(mul(slice_cols(p, 1, 2), slice_cols(q, 0, 2))); }},
      {"concat_rows", [&] { return mean_all(mul(concat_rows<double>({p, q}),
                                                concat_rows<double>({q, p}))); }},
      {"concat_cols", [&] { return mean_all(mul(concat_cols<double>({p, q}),
                                                concat_cols<double>({q, p}))); }},
      {"embed_rows", [&] { return mean_all(embed_rows(table, std::span<const int>(ids))); }},
      {"softmax_rows", [&] { return mean_all(mul(softmax_rows(p), q)); }},
      {"masked_softmax", [&] { return mean_all(mul(masked_softmax_rows(p, allowed), q)); }},
      {"sigmoid", [&] { return mean_all(mul(sigmoid(p), q)); }},
      {"gelu", [&] { return mean_all(mul(gelu(p), q)); }},
      {"layer_norm", [&] { return mean_all(mul(layer_norm(p, g, b), q)); }},
      {"l2_normalize", [&] { return mean_all(mul(l2_normalize_rows(p), q)); }},
      {"weighted_sum_rows", [&] { return mean_all(weighted_sum_rows(p, w)); }},
      {"row_max", [&] { return mean_all(row_max(p)); }},
      {"mean_rows", [&] { return mean_all(mul(mean_rows(p), v)); }},
      {"sum_all", [&] { return scale(sum_all(mul(p, p)), 0.25); }},
      {"cross_entropy", [&] { return cross_entropy_logits(p, std::span<const int>(targets)); }},
      {"bce", [&] { return bce_with_logits(p, bce_t); }},
      {"unfold", [&] { return mean_all(mul(unfold_rows(w, 3), unfold_rows(w, 3))); }},
      {"pool", [&] { return mean_all(mul(adaptive_avg_pool_rows(p, 2), slice_rows(q, 0, 2))); }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    auto res = check_gradients({{"p", p}, {"q", q}, {"w", w}, {"v", v}, {"g", g}, {"b", b},
                                {"table", table}},
                               c.build);
    CHECK_MESSAGE(res.max_rel_err <= 1e-3, c.name, " worst=", res.worst);
  }
}
