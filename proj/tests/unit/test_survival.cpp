#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "vptsurv/errors.hpp"
#include "vptsurv/random.hpp"
#include "vptsurv/survival.hpp"

using namespace vptsurv;

namespace {

std::vector<SurvivalLabel> labels_of(const std::vector<double>& times, const std::vector<int>& censored) {
  std::vector<SurvivalLabel> out;
  for (std::size_t i = 0; i < times.size(); ++i) out.push_back({times[i], censored[i] != 0, 1});
  return out;
}

}  // namespace

TEST_CASE("hazard_to_survival multiplies (1 - h)") {
  const auto zero = hazard_to_survival(std::vector<double>{0.0, 0.0, 0.0});
  for (double s : zero) CHECK(s == doctest::Approx(1.0).epsilon(1e-6));

  const auto two = hazard_to_survival(std::vector<double>{0.1, 0.2});
  REQUIRE(two.size() == 2);
  CHECK(two[0] == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(two[1] == doctest::Approx(0.72).epsilon(1e-12));

  const auto certain = hazard_to_survival(std::vector<double>{1.0, 0.3, 0.4});
  for (double s : certain) CHECK(s < 1e-6);

  CHECK_THROWS_AS(hazard_to_survival(std::vector<double>{}), InvalidArgument);
  CHECK_THROWS_AS(hazard_to_survival(std::vector<double>{0.2, 1.5}), InvalidArgument);
  CHECK_THROWS_AS(hazard_to_survival(std::vector<double>{-0.1}), InvalidArgument);
  CHECK_THROWS_AS(hazard_to_survival(std::vector<double>{std::nan("")}), InvalidArgument);
}

TEST_CASE("survival curves are monotone and bounded for random hazards") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> h(1 + rng.below(8));
    for (double& v : h) v = rng.uniform();
    const HazardPrediction p = HazardPrediction::from_hazards(h);
    for (std::size_t t = 0; t < p.survival.size(); ++t) {
      CHECK(p.hazards[t] >= kHazardEpsilon);
      CHECK(p.hazards[t] <= 1.0 - kHazardEpsilon);
      CHECK(p.survival[t] >= 0.0);
      CHECK(p.survival[t] <= 1.0);
      if (t > 0) CHECK(p.survival[t] <= p.survival[t - 1]);
    }
  }
}

TEST_CASE("risk is the sum of 1 - S and grows with every hazard") {
  const HazardPrediction p = HazardPrediction::from_hazards(std::vector<double>{0.1, 0.2});
  CHECK(p.risk() == doctest::Approx((1 - 0.9) + (1 - 0.72)).epsilon(1e-12));
  const HazardPrediction q = HazardPrediction::from_hazards(std::vector<double>{0.11, 0.2});
  CHECK(q.risk() > p.risk());
}

TEST_CASE("negative log-likelihood matches hand-derived values") {
  // Event in bin 1: -log S(0) - log h(1) = -log 0.5.
  const auto half = HazardPrediction::from_hazards(std::vector<double>{0.5, 0.5});
  CHECK(nll_survival_loss(half, {0.0, false, 1}) == doctest::Approx(0.69314718).epsilon(1e-6));
  // Censored in bin 1: -log S(1) = -log 0.5.
  const auto one = HazardPrediction::from_hazards(std::vector<double>{0.5});
  CHECK(nll_survival_loss(one, {0.0, true, 1}) == doctest::Approx(0.69314718).epsilon(1e-6));
  // Event in bin 2 with h = (0.1, 0.2): -log 0.9 - log 0.2.
  const auto two = HazardPrediction::from_hazards(std::vector<double>{0.1, 0.2});
  CHECK(nll_survival_loss(two, {0.0, false, 2}) ==
        doctest::Approx(-std::log(0.9) - std::log(0.2)).epsilon(1e-9));
  // Perfect prediction of an event in bin 2.
  const auto sharp = HazardPrediction::from_hazards(std::vector<double>{0.0, 1.0});
  CHECK(nll_survival_loss(sharp, {0.0, false, 2}) < 1e-6);

  CHECK_THROWS_AS(nll_survival_loss(two, {0.0, false, 3}), InvalidArgument);
  CHECK_THROWS_AS(nll_survival_loss(two, {0.0, false, 0}), InvalidArgument);

  const std::vector<HazardPrediction> preds = {half, two};
  const std::vector<SurvivalLabel> labels = {{0.0, false, 1}, {0.0, false, 2}};
  CHECK(nll_survival_loss(preds, labels) ==
        doctest::Approx(0.5 * (std::log(2.0) - std::log(0.9) - std::log(0.2))).epsilon(1e-12));
}

TEST_CASE("loss gradient with respect to hazards matches central differences") {
  Rng rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int bins = 1 + static_cast<int>(rng.below(6));
    std::vector<double> h(static_cast<std::size_t>(bins));
    for (double& v : h) v = rng.uniform(0.05, 0.95);
    const SurvivalLabel label{0.0, rng.uniform() < 0.3, 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(bins)))};
    std::vector<double> grad;
    const double loss = nll_survival_loss(h, label, &grad);
    CHECK(loss >= 0.0);
    REQUIRE(grad.size() == h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
      const double numeric = oracle::central_difference(
          [&](const std::vector<double>& x) { return nll_survival_loss(x, label, nullptr); }, h, i);
      const double denom = std::max({std::abs(numeric), std::abs(grad[i]), 1e-8});
      worst = std::max(worst, std::abs(numeric - grad[i]) / denom);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("concordance index: hand cases") {
  CHECK(concordance_index(std::vector<double>{4, 3, 2, 1}, labels_of({1, 2, 3, 4}, {0, 0, 0, 0})) == 1.0);
  CHECK(concordance_index(std::vector<double>{1, 1, 1, 1}, labels_of({1, 2, 3, 4}, {0, 0, 0, 0})) == 0.5);
  // Comparable pairs (0,1) (0,2) (0,3) (1,2) (1,3): concordant except (1,2).
  CHECK(concordance_index(std::vector<double>{0.9, 0.5, 0.7, 0.2}, labels_of({1, 2, 3, 4}, {0, 0, 1, 0})) ==
        doctest::Approx(0.8).epsilon(1e-15));
  // Equal times are never comparable.
  CHECK_THROWS_AS(concordance_index(std::vector<double>{1, 2}, labels_of({5, 5}, {0, 0})), UndefinedMetric);
  CHECK_THROWS_AS(concordance_index(std::vector<double>{1, 2}, labels_of({1, 2}, {1, 1})), UndefinedMetric);
  CHECK_THROWS_AS(concordance_index(std::vector<double>{1}, labels_of({1, 2}, {0, 0})), InvalidArgument);
}

TEST_CASE("concordance index equals the brute-force enumerator exactly") {
  Rng rng(2024);
  for (int instance = 0; instance < 100; ++instance) {
    std::vector<double> risks(50);
    std::vector<SurvivalLabel> labels(50);
    for (std::size_t i = 0; i < 50; ++i) {
      // Coarse grids force ties in both times and risks.
      risks[i] = static_cast<double>(rng.below(20)) / 4.0;
      labels[i] = {static_cast<double>(1 + rng.below(30)), rng.uniform() < 0.3, 1};
    }
    CHECK(concordance_index(risks, labels) == oracle::concordance(risks, labels));
  }
}

TEST_CASE("concordance index is rank-based and antisymmetric") {
  Rng rng(9);
  std::vector<double> risks(40), transformed(40), negated(40);
  std::vector<SurvivalLabel> labels(40);
  for (std::size_t i = 0; i < risks.size(); ++i) {
    risks[i] = rng.normal();
    transformed[i] = std::exp(3.0 * risks[i]) + 7.0;
    negated[i] = -risks[i];
    labels[i] = {rng.uniform(0.0, 100.0), rng.uniform() < 0.3, 1};
  }
  const double ci = concordance_index(risks, labels);
  CHECK(concordance_index(transformed, labels) == ci);
  CHECK(ci + concordance_index(negated, labels) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("Kaplan-Meier: hand-computed cases") {
  const auto censored = kaplan_meier(labels_of({1, 2, 3}, {1, 1, 1}));
  CHECK(censored.event_times.empty());
  CHECK(censored.at(0.5) == 1.0);
  CHECK(censored.at(10.0) == 1.0);

  const auto events = kaplan_meier(labels_of({1, 2, 3}, {0, 0, 0}));
  REQUIRE(events.survival_probs.size() == 3);
  CHECK(std::abs(events.survival_probs[0] - 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(events.survival_probs[1] - 1.0 / 3.0) < 1e-12);
  CHECK(std::abs(events.survival_probs[2] - 0.0) < 1e-12);

  const auto mixed = kaplan_meier(labels_of({1, 2, 3}, {0, 1, 0}));
  REQUIRE(mixed.event_times == std::vector<double>{1, 3});
  CHECK(std::abs(mixed.at(1.0) - 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(mixed.at(2.5) - 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(mixed.at(3.0) - 0.0) < 1e-12);
  CHECK(mixed.at(0.5) == 1.0);

  CHECK_THROWS_AS(kaplan_meier(std::vector<SurvivalLabel>{}), InvalidArgument);
}

TEST_CASE("Kaplan-Meier matches the product-limit definition on random data") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<SurvivalLabel> labels(30);
    for (auto& l : labels) l = {static_cast<double>(1 + rng.below(12)), rng.uniform() < 0.4, 1};
    const auto km = kaplan_meier(labels);
    for (std::size_t k = 0; k < km.event_times.size(); ++k) {
      CHECK(std::abs(km.survival_probs[k] - oracle::kaplan_meier_at(labels, km.event_times[k])) < 1e-12);
      if (k > 0) CHECK(km.survival_probs[k] <= km.survival_probs[k - 1]);
    }
  }
}

TEST_CASE("Kaplan-Meier without censoring is the empirical survival fraction") {
  Rng rng(5);
  std::vector<SurvivalLabel> labels(25);
  for (auto& l : labels) l = {static_cast<double>(rng.below(10)), false, 1};
  const auto km = kaplan_meier(labels);
  for (std::size_t k = 0; k < km.event_times.size(); ++k) {
    const double alive = static_cast<double>(std::count_if(labels.begin(), labels.end(), [&](const SurvivalLabel& l) {
      return l.time > km.event_times[k];
    }));
    CHECK(std::abs(km.survival_probs[k] - alive / 25.0) < 1e-12);
  }
}

TEST_CASE("discretize_time uses nearest-rank quartiles of event times") {
  const auto d = discretize_time(labels_of({10, 20, 30, 40, 50, 60, 70, 80}, {0, 0, 0, 0, 0, 0, 0, 0}), 4);
  CHECK(d.binning.edges == std::vector<double>{20, 40, 60});
  CHECK(d.binning.bin_of(35) == 2);
  CHECK(d.binning.bin_of(20) == 1);
  CHECK(d.binning.bin_of(20.5) == 2);
  CHECK(d.binning.bin_of(1000) == 4);
  CHECK(d.bins == std::vector<int>{1, 1, 2, 2, 3, 3, 4, 4});

  const auto single = discretize_time(labels_of({3, 1, 2}, {0, 1, 0}), 1);
  CHECK(single.binning.edges.empty());
  CHECK(single.bins == std::vector<int>{1, 1, 1});

  // Censored times do not move the edges.
  const auto with_censoring =
      discretize_time(labels_of({10, 20, 30, 40, 50, 60, 70, 80, 5, 999}, {0, 0, 0, 0, 0, 0, 0, 0, 1, 1}), 4);
  CHECK(with_censoring.binning.edges == std::vector<double>{20, 40, 60});

  CHECK_THROWS_AS(discretize_time(labels_of({5, 5, 5, 5}, {0, 0, 0, 0}), 4), InvalidArgument);
  CHECK_THROWS_AS(discretize_time(labels_of({1, 2, 3}, {0, 0, 1}), 4), InvalidArgument);
}

TEST_CASE("bin index is monotone in time") {
  TimeBinning b{{2.0, 5.0, 9.0}};
  int previous = 0;
  for (double t = 0.0; t < 12.0; t += 0.25) {
    CHECK(b.bin_of(t) >= previous);
    previous = b.bin_of(t);
  }
  std::vector<SurvivalLabel> labels = labels_of({1, 6, 100}, {0, 1, 0});
  assign_bins(b, labels);
  CHECK(labels[0].bin == 1);
  CHECK(labels[1].bin == 3);
  CHECK(labels[2].bin == 4);
}

TEST_CASE("median-risk stratification") {
  using G = RiskGroup;
  CHECK(stratify_by_median_risk(std::vector<double>{1, 2, 3, 4}) == std::vector<G>{G::low, G::low, G::high, G::high});
  CHECK(stratify_by_median_risk(std::vector<double>{7, 7, 7}) == std::vector<G>{G::low, G::low, G::low});
  CHECK(stratify_by_median_risk(std::vector<double>{0.2, 0.9, 0.5}) == std::vector<G>{G::low, G::high, G::low});
  CHECK(to_string(G::high) == "high");
}
