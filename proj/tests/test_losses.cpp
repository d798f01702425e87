#include <doctest.h>

#include <array>
#include <cmath>

#include "oracles.hpp"
#include "signgen/losses.hpp"

using namespace signgen;

namespace {

Tensor probs_tensor(const std::vector<std::vector<double>>& rows, bool requires_grad = false) {
  const int t = static_cast<int>(rows.size());
  const int c = static_cast<int>(rows[0].size());
  std::vector<double> flat;
  for (const auto& row : rows) flat.insert(flat.end(), row.begin(), row.end());
  return Tensor::from_values({t, c}, std::move(flat), requires_grad);
}

}  // namespace

TEST_CASE("mse loss basics") {
  Tensor a = Tensor::from_values({2}, {0, 0});
  Tensor b = Tensor::from_values({2}, {1, 1});
  CHECK(mse_loss(a, a).value() == 0.0);
  CHECK(mse_loss(a, b).value() == 1.0);
  CHECK_THROWS_AS(mse_loss(Tensor::zeros({2}), Tensor::zeros({3})), std::invalid_argument);
}

TEST_CASE("mse scales quadratically") {
  Rng rng(3);
  Tensor pred = Tensor::zeros({3, 4});
  Tensor truth = Tensor::zeros({3, 4});
  for (double& v : pred.values()) v = rng.uniform(-1, 1);
  for (double& v : truth.values()) v = rng.uniform(-1, 1);
  const double base = mse_loss(pred, truth).value();
  const double c = 3.0;
  const double scaled = mse_loss(scale(pred, c), scale(truth, c)).value();
  CHECK(scaled == doctest::Approx(c * c * base).epsilon(1e-12));
}

TEST_CASE("pool embedding is the temporal mean") {
  Tensor single = Tensor::from_values({1, 3}, {4, 5, 6});
  CHECK(pool_embedding(single).values() == std::vector<double>{4, 5, 6});

  Tensor repeated = Tensor::from_values({3, 2}, {7, 8, 7, 8, 7, 8});
  CHECK(pool_embedding(repeated).values() == std::vector<double>{7, 8});

  Tensor two = Tensor::from_values({2, 2}, {0, 0, 2, 4});
  CHECK(pool_embedding(two).values() == std::vector<double>{1, 2});
}

TEST_CASE("triplet distance worked examples") {
  // separation already exceeds the margin
  Tensor b0 = Tensor::from_values({2}, {0, 0});
  Tensor s_half = Tensor::from_values({2}, {std::sqrt(0.5), 0});
  CHECK(triplet_distance(b0, b0, s_half, 0.2).value() == 0.0);

  Tensor t1 = Tensor::from_values({2}, {0.1, 0});
  Tensor s1 = Tensor::from_values({2}, {1, 0});
  CHECK(triplet_distance(b0, t1, s1, 0.2).value() == 0.0);  // max(0.01 - 1 + 0.2, 0)

  // equal distances leave exactly the margin
  CHECK(triplet_distance(b0, s1, s1, 0.2).value() == doctest::Approx(0.2).epsilon(1e-15));

  CHECK_THROWS_AS(triplet_distance(b0, Tensor::zeros({3}), s1, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(triplet_distance(b0, t1, s1, -0.1), std::invalid_argument);
}

TEST_CASE("triplet distance stays in its bounds") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    auto rand_vec = [&rng] {
      Tensor t = Tensor::zeros({5});
      for (double& v : t.values()) v = rng.uniform(-2, 2);
      return t;
    };
    Tensor b = rand_vec(), t = rand_vec(), s = rand_vec();
    const double margin = rng.uniform(0.0, 1.0);
    const double d = triplet_distance(b, t, s, margin).value();
    double d_bt = 0.0;
    for (int i = 0; i < 5; ++i) {
      const double diff = b.at(i) - t.at(i);
      d_bt += diff * diff;
    }
    CHECK(d >= 0.0);
    CHECK(d <= d_bt + margin + 1e-12);
  }
}

TEST_CASE("metric loss is translation invariant") {
  Rng rng(17);
  auto rand_seq = [&rng](int frames) {
    Tensor t = Tensor::zeros({frames, 4});
    for (double& v : t.values()) v = rng.uniform(-1, 1);
    return t;
  };
  std::vector<Tensor> truths{rand_seq(3), rand_seq(5), rand_seq(2)};
  std::vector<Tensor> preds{rand_seq(3), rand_seq(5), rand_seq(2)};

  std::vector<double> shift{0.7, -1.3, 0.2, 2.5};
  auto shifted = [&shift](const std::vector<Tensor>& seqs) {
    std::vector<Tensor> out;
    for (const Tensor& s : seqs) {
      Tensor c = s.detach();
      for (std::size_t i = 0; i < c.numel(); ++i) c.values()[i] += shift[i % 4];
      out.push_back(c);
    }
    return out;
  };

  Rng rng_a(5), rng_b(5);
  Tensor base = metric_loss(select_triplets(truths, preds, rng_a));
  Tensor moved = metric_loss(select_triplets(shifted(truths), shifted(preds), rng_b));
  CHECK(moved.value() == doctest::Approx(base.value()).epsilon(1e-9));
}

TEST_CASE("select triplets draws a uniform in-batch negative") {
  Rng rng(0);
  std::vector<Tensor> truths, preds;
  for (int i = 0; i < 4; ++i) {
    truths.push_back(Tensor::full({2, 3}, i));
    preds.push_back(Tensor::full({2, 3}, i + 0.5));
  }
  auto triplets = select_triplets(truths, preds, rng);
  REQUIRE(triplets.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(triplets[i].baseline.values() == std::vector<double>{double(i), double(i), double(i)});
    CHECK(triplets[i].truth.at(0) == doctest::Approx(i + 0.5));
    CHECK(triplets[i].negative.values() != triplets[i].baseline.values());
  }

  Rng r1(9), r2(9);
  auto a = select_triplets(truths, preds, r1);
  auto b = select_triplets(truths, preds, r2);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a[i].negative.values() == b[i].negative.values());

  CHECK_THROWS_AS(select_triplets({truths[0]}, {preds[0]}, rng), std::invalid_argument);
}

TEST_CASE("negative draws are uniform over the batch") {
  std::vector<Tensor> truths, preds;
  for (int i = 0; i < 4; ++i) {
    truths.push_back(Tensor::full({1, 1}, i));
    preds.push_back(Tensor::full({1, 1}, i));
  }
  std::array<std::array<int, 4>, 4> counts{};
  Rng rng(123);
  const int draws = 10000;
  for (int rep = 0; rep < draws; ++rep) {
    auto triplets = select_triplets(truths, preds, rng);
    for (int i = 0; i < 4; ++i) {
      const int j = static_cast<int>(triplets[static_cast<std::size_t>(i)].negative.value());
      CHECK(j != i);
      ++counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
  }
  // binomial(10000, 1/3): sigma ~ 47.1, so a 3-sigma badge is +-141
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      if (i == j) continue;
      CHECK(std::abs(counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] -
                     draws / 3.0) < 3.0 * std::sqrt(draws * (1.0 / 3.0) * (2.0 / 3.0)));
    }
}

TEST_CASE("hardest mode picks the nearest in-batch negative") {
  std::vector<Tensor> truths{Tensor::full({1, 2}, 0.0), Tensor::full({1, 2}, 10.0),
                             Tensor::full({1, 2}, 0.3)};
  std::vector<Tensor> preds = truths;
  Rng rng(1);
  auto triplets = select_triplets(truths, preds, rng, 0.2, true);
  CHECK(triplets[0].negative.at(0) == 0.3);   // nearest to 0.0
  CHECK(triplets[1].negative.at(0) == 0.3);   // nearest to 10.0
  CHECK(triplets[2].negative.at(0) == 0.0);   // nearest to 0.3
}

TEST_CASE("metric loss sums triplet distances") {
  Tensor b = Tensor::from_values({2}, {0, 0});
  Tensor s = Tensor::from_values({2}, {1, 0});
  std::vector<TripletBatch> satisfied{{b, b, s, 0.2}, {b, b, s, 0.2}};
  CHECK(metric_loss(satisfied).value() == 0.0);

  std::vector<TripletBatch> two{{b, s, s, 0.2}, {b, s, s, 0.3}};
  CHECK(metric_loss(two).value() == doctest::Approx(0.5).epsilon(1e-15));

  CHECK_THROWS_AS(metric_loss({}), std::invalid_argument);
}

TEST_CASE("metric loss gradient flows only through predictions") {
  Rng rng(2);
  auto rand_seq = [&rng](bool rg) {
    Tensor t = Tensor::zeros({2, 3}, rg);
    for (double& v : t.values()) v = rng.uniform(-1, 1);
    return t;
  };
  // ground truths marked requires_grad on purpose: selection must detach them
  std::vector<Tensor> truths{rand_seq(true), rand_seq(true)};
  std::vector<Tensor> preds{rand_seq(true), rand_seq(true)};
  Rng sel(3);
  auto triplets = select_triplets(truths, preds, sel, 5.0);  // margin forces violations
  Tensor loss = metric_loss(triplets);
  CHECK(loss.value() > 0.0);
  backward(loss);
  for (const Tensor& t : truths) CHECK_FALSE(t.has_grad());
  bool any_nonzero = false;
  for (const Tensor& p : preds) {
    REQUIRE(p.has_grad());
    for (double g : p.grad()) any_nonzero = any_nonzero || g != 0.0;
  }
  CHECK(any_nonzero);
}

// ---- CTC -----------------------------------------------------------------

TEST_CASE("ctc worked example") {
  // frame 1: p(a)=0.6, p(blank)=0.4; frame 2: 0.5/0.5
  Tensor probs = probs_tensor({{0.4, 0.6}, {0.5, 0.5}});
  const double p = ctc_probability(probs, {1}, 0).value();
  CHECK(p == doctest::Approx(0.8).epsilon(1e-12));

  Tensor rec = recognition_loss(probs, {1}, LossForm::OneMinusP, 0);
  CHECK(rec.value() == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("ctc infeasible target yields probability zero, loss one") {
  Tensor probs = probs_tensor({{0.4, 0.6}, {0.5, 0.5}});
  CHECK(ctc_probability(probs, {1, 1, 1}, 0).value() == 0.0);
  CHECK(recognition_loss(probs, {1, 1, 1}, LossForm::OneMinusP, 0).value() == 1.0);
  // adjacent repeats need a separating blank
  CHECK(ctc_probability(probs, {1, 1}, 0).value() == 0.0);
}

TEST_CASE("ctc empty target is the all-blank path") {
  Tensor probs = probs_tensor({{0.4, 0.6}, {0.5, 0.5}, {0.9, 0.1}});
  CHECK(ctc_probability(probs, {}, 0).value() ==
        doctest::Approx(0.4 * 0.5 * 0.9).epsilon(1e-12));
}

TEST_CASE("ctc perfect deterministic alignment has zero loss") {
  Tensor probs = probs_tensor({{0.0, 1.0}, {1.0, 0.0}, {0.0, 1.0}});
  CHECK(ctc_probability(probs, {1, 1}, 0).value() == doctest::Approx(1.0));
  CHECK(recognition_loss(probs, {1, 1}, LossForm::OneMinusP, 0).value() ==
        doctest::Approx(0.0));
}

TEST_CASE("ctc rejects bad labels") {
  Tensor probs = probs_tensor({{0.4, 0.6}});
  CHECK_THROWS_AS(ctc_probability(probs, {0}, 0), std::invalid_argument);  // blank in target
  CHECK_THROWS_AS(ctc_probability(probs, {5}, 0), std::invalid_argument);
  CHECK_THROWS_AS(ctc_probability(Tensor::zeros({4}), {1}, 0), std::invalid_argument);
}

TEST_CASE("ctc matches brute-force enumeration") {
  for (int t = 1; t <= 6; ++t) {
    for (int vocab = 1; vocab <= 3; ++vocab) {
      const int n_classes = vocab + 1;
      auto rows = oracles::random_prob_rows(t, n_classes,
                                            1000 + static_cast<std::uint64_t>(t * 10 + vocab));
      Tensor probs = probs_tensor(rows);
      for (const auto& target : oracles::all_targets(n_classes, 0, 3)) {
        const double expect = oracles::ctc_brute_force(rows, target, 0);
        const double got = ctc_probability(probs, target, 0).value();
        CHECK(std::abs(expect - got) <= 1e-9);
      }
    }
  }
}

TEST_CASE("ctc total probability over all targets is one") {
  for (int t = 1; t <= 4; ++t) {
    for (int vocab = 1; vocab <= 3; ++vocab) {
      const int n_classes = vocab + 1;
      auto rows = oracles::random_prob_rows(t, n_classes,
                                            2000 + static_cast<std::uint64_t>(t * 10 + vocab));
      Tensor probs = probs_tensor(rows);
      double total = 0.0;
      for (const auto& target : oracles::all_targets(n_classes, 0, t))
        total += ctc_probability(probs, target, 0).value();
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("ctc log form matches -log p") {
  auto rows = oracles::random_prob_rows(4, 3, 31);
  Tensor probs = probs_tensor(rows);
  const double p = ctc_probability(probs, {1, 2}, 0).value();
  const double nll = recognition_loss(probs, {1, 2}, LossForm::NegLogP, 0).value();
  CHECK(nll == doctest::Approx(-std::log(p)).epsilon(1e-10));
  CHECK(std::isinf(recognition_loss(probs, {1, 1, 1, 1, 1}, LossForm::NegLogP, 0).value()));
}

// ---- translation loss -------------------------------------------------------

TEST_CASE("translation loss product rule") {
  Tensor z = probs_tensor({{1.0, 0.0}, {0.0, 1.0}});
  CHECK(translation_loss(z, {0, 1}).value() == 0.0);

  Tensor z2 = probs_tensor({{0.5, 0.5}, {0.6, 0.4}});
  CHECK(translation_loss(z2, {0, 1}).value() == doctest::Approx(0.8).epsilon(1e-12));

  Tensor z3 = probs_tensor({{0.0, 1.0}, {0.6, 0.4}});
  CHECK(translation_loss(z3, {0, 1}).value() == 1.0);

  CHECK_THROWS_AS(translation_loss(z2, {0}), std::invalid_argument);
  CHECK_THROWS_AS(translation_loss(z2, {0, 7}), std::invalid_argument);
}

TEST_CASE("translation loss log form") {
  Tensor z = probs_tensor({{0.5, 0.5}, {0.6, 0.4}});
  CHECK(translation_loss(z, {0, 1}, LossForm::NegLogP).value() ==
        doctest::Approx(-std::log(0.2)).epsilon(1e-12));
}

// ---- totals -----------------------------------------------------------------

TEST_CASE("weighted totals") {
  LossWeights w;
  CHECK(w.lambda_a == 5.0);
  CHECK(w.lambda_b == 5.0);
  CHECK(w.lambda_c == 100.0);
  CHECK(w.lambda_d == 100.0);

  Tensor la = Tensor::scalar(0.1);
  Tensor lb = Tensor::scalar(0.2);
  CHECK(total_text2pose_loss(la, lb, w).value() == doctest::Approx(1.5).epsilon(1e-15));

  LossWeights pure;
  pure.lambda_b = 0.0;
  CHECK(total_text2pose_loss(la, lb, pure).value() ==
        doctest::Approx(5.0 * 0.1).epsilon(1e-15));

  Tensor lc = Tensor::scalar(0.01);
  CHECK(total_pose2text_loss(lc, lc, w).value() == doctest::Approx(2.0).epsilon(1e-15));

  LossWeights bad;
  bad.lambda_a = -1.0;
  CHECK_THROWS_AS(total_text2pose_loss(la, lb, bad), std::invalid_argument);
}
