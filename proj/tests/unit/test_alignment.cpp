#include "protlang/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "protlang/checkpoint.hpp"
#include "protlang/errors.hpp"
#include "support/gradcheck.hpp"

using namespace protlang;

TEST_CASE("gated fusion and tertiary projection emit the expected shapes") {
  Rng rng(3);
  PcgModule<float> pcg(16, 4, 9);
  TertiaryProjector<float> proj(6, 16, 4, 9);
  Tensor<float> e_sec = Tensor<float>::randn({11, 8}, 1.0, rng);
  Tensor<float> e_ter = Tensor<float>::randn({11, 6}, 1.0, rng);
  Tensor<float> q = Tensor<float>::randn({4, 16}, 1.0, rng);
  CHECK(pcg.forward(e_sec, q).shape() == std::vector<std::size_t>{4, 16});
  CHECK(proj.forward(e_ter).shape() == std::vector<std::size_t>{4, 16});

  Tensor<float> one_row = Tensor<float>::randn({1, 8}, 1.0, rng);
  CHECK(pcg.forward(one_row, q).shape() == std::vector<std::size_t>{4, 16});
}

TEST_CASE("zero parameters gate at exactly one half") {
  PcgModule<float> pcg(16, 4, 9);
  for (auto& p : pcg.parameters())
    std::fill(p.tensor.raw().begin(), p.tensor.raw().end(), 0.0f);
  Rng rng(4);
  Tensor<float> e_sec = Tensor<float>::randn({7, 8}, 1.0, rng);
  Tensor<float> q = Tensor<float>::randn({4, 16}, 1.0, rng);
  Tensor<float> out = pcg.forward(e_sec, q);
  for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == 0.5f * q.data()[i]);
}

TEST_CASE("gate always attenuates") {
  PcgModule<float> pcg(8, 3, 123);
  Rng rng(5);
  Tensor<float> e_sec = Tensor<float>::randn({9, 8}, 2.0, rng);
  Tensor<float> q = Tensor<float>::randn({3, 8}, 1.0, rng);
  Tensor<float> out = pcg.forward(e_sec, q);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    CHECK(std::abs(out.data()[i]) < std::abs(q.data()[i]));
    CHECK(out.data()[i] * q.data()[i] >= 0);  // gate keeps the sign
  }
}

TEST_CASE("alignment contrastive loss anchors") {
  SUBCASE("identical candidates cost ln(k+1)") {
    Rng rng(6);
    Tensor<double> aligned = Tensor<double>::randn({3, 4}, 1.0, rng);
    Tensor<double> pos = Tensor<double>::randn({3, 4}, 1.0, rng);
    std::vector<Tensor<double>> negs{pos, pos, pos};
    CHECK(align_contrastive_loss(aligned, pos, negs, 0.8).item() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("aligned matches positive and opposes the negative") {
    Tensor<double> aligned = Tensor<double>::from_data({2, 4}, {1, 0, 0, 0, 1, 0, 0, 0});
    Tensor<double> pos = Tensor<double>::from_data({1, 4}, {3, 0, 0, 0});
    std::vector<Tensor<double>> negs{Tensor<double>::from_data({1, 4}, {-2, 0, 0, 0})};
    const double want = std::log1p(std::exp(-2.5));  // (cos -1 - cos 1) / 0.8
    CHECK(align_contrastive_loss(aligned, pos, negs, 0.8).item() ==
          doctest::Approx(want).epsilon(1e-12));
  }
  SUBCASE("rejects bad arguments") {
    Tensor<double> a = Tensor<double>::zeros({2, 4});
    CHECK_THROWS_AS(align_contrastive_loss(a, a, {}, 0.8), ContractError);
    CHECK_THROWS_AS(align_contrastive_loss(a, a, {a}, 0.0), ContractError);
  }
}

TEST_CASE("alignment gradients match finite differences") {
  const std::size_t d = 8, nq = 3, c_ter = 6;
  PcgModule<double> pcg(d, nq, 42, 3);
  TertiaryProjector<double> proj(c_ter, d, nq, 42, 3);
  Rng rng(7);
  Tensor<double> e_sec = Tensor<double>::randn({5, 8}, 1.0, rng);
  Tensor<double> q = Tensor<double>::randn({nq, d}, 1.0, rng);
  Tensor<double> et_pos = Tensor<double>::randn({5, c_ter}, 1.0, rng);
  Tensor<double> et_n1 = Tensor<double>::randn({4, c_ter}, 1.0, rng);
  Tensor<double> et_n2 = Tensor<double>::randn({6, c_ter}, 1.0, rng);

  std::vector<NamedTensor<double>> leaves = pcg.parameters();
  for (auto& p : proj.parameters()) leaves.push_back(p);
  // The zero-bias init leaves all candidate summaries nearly collinear, which
  // is too ill-conditioned for finite differences; start somewhere generic.
  Rng jitter(99);
  for (auto& l : leaves)
    for (auto& v : l.tensor.raw()) v += 0.3 * jitter.normal();
  auto res = testsupport::check_gradients(leaves, [&] {
    std::vector<Tensor<double>> negs{proj.forward(et_n1), proj.forward(et_n2)};
    return align_contrastive_loss(pcg.forward(e_sec, q), proj.forward(et_pos), negs, 0.8);
  });
  CAPTURE(res.worst);
  CHECK(res.max_rel_err <= 1e-3);
  CHECK(res.probes > 20);
}

TEST_CASE("alignment modules reject malformed inputs") {
  PcgModule<float> pcg(16, 4, 9);
  TertiaryProjector<float> proj(6, 16, 4, 9);
  Rng rng(8);
  Tensor<float> q = Tensor<float>::randn({4, 16}, 1.0, rng);
  CHECK_THROWS_AS(pcg.forward(Tensor<float>::zeros({5, 7}), q), ShapeError);
  CHECK_THROWS_AS(pcg.forward(Tensor<float>::zeros({5, 8}), Tensor<float>::zeros({3, 16})),
                  ShapeError);
  CHECK_THROWS_AS(proj.forward(Tensor<float>::zeros({5, 7})), ShapeError);
  CHECK_THROWS_AS(PcgModule<float>(16, 4, 9, 4), ContractError);
  CHECK_THROWS_AS(TertiaryProjector<float>(6, 16, 4, 9, 0), ContractError);
}

TEST_CASE("alignment construction is seed deterministic") {
  PcgModule<float> a(16, 4, 77);
  PcgModule<float> b(16, 4, 77);
  PcgModule<float> c(16, 4, 78);
  CHECK(params_hash(a.parameters()) == params_hash(b.parameters()));
  CHECK(params_hash(a.parameters()) != params_hash(c.parameters()));
  TertiaryProjector<float> pa(6, 16, 4, 77);
  TertiaryProjector<float> pb(6, 16, 4, 77);
  CHECK(params_hash(pa.parameters()) == params_hash(pb.parameters()));
}
