#include "vptsurv/survival.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>

#include "vptsurv/errors.hpp"

namespace vptsurv {

std::vector<double> clamp_hazards(std::span<const double> hazards) {
  if (hazards.empty()) throw InvalidArgument("hazards: empty sequence");
  std::vector<double> out(hazards.size());
  for (std::size_t t = 0; t < hazards.size(); ++t) {
    const double h = hazards[t];
    if (!(h >= 0.0 && h <= 1.0)) {
      throw InvalidArgument("hazards: value " + std::to_string(h) + " at bin " +
                            std::to_string(t + 1) + " is outside [0, 1]");
    }
    out[t] = std::clamp(h, kHazardEpsilon, 1.0 - kHazardEpsilon);
  }
  return out;
}

std::vector<double> hazard_to_survival(std::span<const double> hazards) {
  std::vector<double> survival = clamp_hazards(hazards);
  double s = 1.0;
  for (double& v : survival) {
    s *= 1.0 - v;
    v = s;
  }
  return survival;
}

double risk_from_survival(std::span<const double> survival) {
  double risk = 0.0;
  for (double s : survival) risk += 1.0 - s;
  return risk;
}

HazardPrediction HazardPrediction::from_hazards(std::span<const double> hazards) {
  HazardPrediction pred;
  pred.hazards = clamp_hazards(hazards);
  pred.survival = hazard_to_survival(pred.hazards);
  return pred;
}

double HazardPrediction::risk() const { return risk_from_survival(survival); }

double nll_survival_loss(std::span<const double> hazards, const SurvivalLabel& label,
                         std::vector<double>* grad) {
  const int bins = static_cast<int>(hazards.size());
  if (bins == 0) throw InvalidArgument("nll: empty hazards");
  if (label.bin < 1 || label.bin > bins) {
    throw InvalidArgument("nll: label bin " + std::to_string(label.bin) + " outside [1, " +
                          std::to_string(bins) + "]");
  }
  if (grad) grad->assign(hazards.size(), 0.0);

  // log S(b) = sum_{u<=b} log(1 - h_u); every term before the event bin
  // contributes -log(1 - h_u) in both branches.
  const int survived_through = label.censored ? label.bin : label.bin - 1;
  double loss = 0.0;
  for (int u = 0; u < survived_through; ++u) {
    const double raw = hazards[u];
    const double h = std::clamp(raw, kHazardEpsilon, 1.0 - kHazardEpsilon);
    loss -= std::log1p(-h);
    if (grad && h == raw) (*grad)[u] = 1.0 / (1.0 - h);
  }
  if (!label.censored) {
    const double raw = hazards[label.bin - 1];
    const double h = std::clamp(raw, kHazardEpsilon, 1.0 - kHazardEpsilon);
    loss -= std::log(h);
    if (grad && h == raw) (*grad)[label.bin - 1] = -1.0 / h;
  }
  return loss;
}

double nll_survival_loss(const HazardPrediction& pred, const SurvivalLabel& label) {
  return nll_survival_loss(pred.hazards, label, nullptr);
}

double nll_survival_loss(std::span<const HazardPrediction> preds,
                         std::span<const SurvivalLabel> labels) {
  if (preds.size() != labels.size() || preds.empty()) {
    throw InvalidArgument("nll: batch sizes differ or are empty");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += nll_survival_loss(preds[i], labels[i]);
  return total / static_cast<double>(preds.size());
}

namespace {

// Counts of strictly smaller / equal risk ranks among inserted subjects.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t rank) {
    for (std::size_t i = rank + 1; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // Number of inserted ranks < rank.
  std::int64_t prefix(std::size_t rank) const {
    std::int64_t sum = 0;
    for (std::size_t i = rank; i > 0; i -= i & (~i + 1)) sum += tree_[i];
    return sum;
  }

 private:
  std::vector<std::int64_t> tree_;
};

}  // namespace

double concordance_index(std::span<const double> risks, std::span<const SurvivalLabel> labels) {
  const std::size_t n = risks.size();
  if (n != labels.size()) throw InvalidArgument("concordance_index: length mismatch");
  if (n < 2) throw InvalidArgument("concordance_index: need at least two samples");
  for (double r : risks) {
    if (!std::isfinite(r)) throw InvalidArgument("concordance_index: non-finite risk");
  }

  std::vector<double> sorted_risks(risks.begin(), risks.end());
  std::sort(sorted_risks.begin(), sorted_risks.end());
  sorted_risks.erase(std::unique(sorted_risks.begin(), sorted_risks.end()), sorted_risks.end());
  auto rank_of = [&](double r) {
    return static_cast<std::size_t>(
        std::lower_bound(sorted_risks.begin(), sorted_risks.end(), r) - sorted_risks.begin());
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return labels[a].time < labels[b].time; });

  // Walk groups of equal time from the latest down; the tree holds every
  // subject with a strictly later time than the current group.
  Fenwick later(sorted_risks.size());
  std::int64_t inserted = 0;
  std::int64_t comparable = 0;
  std::int64_t concordant = 0;
  std::int64_t tied = 0;
  std::size_t hi = n;
  while (hi > 0) {
    std::size_t lo = hi - 1;
    while (lo > 0 && labels[order[lo - 1]].time == labels[order[hi - 1]].time) --lo;
    for (std::size_t k = lo; k < hi; ++k) {
      const std::size_t i = order[k];
      if (labels[i].censored) continue;
      const std::size_t rank = rank_of(risks[i]);
      const std::int64_t below = later.prefix(rank);
      const std::int64_t at_or_below = later.prefix(rank + 1);
      comparable += inserted;
      concordant += below;
      tied += at_or_below - below;
    }
    for (std::size_t k = lo; k < hi; ++k) later.add(rank_of(risks[order[k]]));
    inserted += static_cast<std::int64_t>(hi - lo);
    hi = lo;
  }

  if (comparable == 0) {
    throw UndefinedMetric("concordance_index: no comparable pairs");
  }
  return (static_cast<double>(concordant) + 0.5 * static_cast<double>(tied)) /
         static_cast<double>(comparable);
}

double SurvivalCurveEstimate::at(double time) const {
  const auto it = std::upper_bound(event_times.begin(), event_times.end(), time);
  if (it == event_times.begin()) return 1.0;
  return survival_probs[static_cast<std::size_t>(it - event_times.begin()) - 1];
}

SurvivalCurveEstimate kaplan_meier(std::span<const SurvivalLabel> labels) {
  if (labels.empty()) throw InvalidArgument("kaplan_meier: empty input");
  std::vector<SurvivalLabel> sorted(labels.begin(), labels.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const SurvivalLabel& a, const SurvivalLabel& b) { return a.time < b.time; });

  SurvivalCurveEstimate curve;
  double s = 1.0;
  std::size_t at_risk = sorted.size();
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double t = sorted[i].time;
    std::size_t events = 0;
    std::size_t leaving = 0;
    for (; i < sorted.size() && sorted[i].time == t; ++i) {
      ++leaving;
      if (!sorted[i].censored) ++events;
    }
    if (events > 0) {
      s *= 1.0 - static_cast<double>(events) / static_cast<double>(at_risk);
      curve.event_times.push_back(t);
      curve.survival_probs.push_back(s);
    }
    at_risk -= leaving;
  }
  return curve;
}

int TimeBinning::bin_of(double time) const {
  // Number of edges strictly below `time`, since bins are closed on the right.
  const auto it = std::lower_bound(edges.begin(), edges.end(), time);
  return static_cast<int>(it - edges.begin()) + 1;
}

Discretization discretize_time(std::span<const SurvivalLabel> labels, int bins) {
  if (bins < 1) throw InvalidArgument("discretize_time: bin count must be >= 1");
  std::vector<double> events;
  for (const auto& l : labels) {
    if (!l.censored) events.push_back(l.time);
  }
  if (static_cast<int>(events.size()) < bins) {
    throw InvalidArgument("discretize_time: " + std::to_string(events.size()) +
                          " uncensored events for " + std::to_string(bins) + " bins");
  }
  std::sort(events.begin(), events.end());

  Discretization out;
  const auto n = static_cast<long long>(events.size());
  for (int k = 1; k < bins; ++k) {
    // Nearest rank: ceil(k n / T), computed in integers.
    const long long rank = (static_cast<long long>(k) * n + bins - 1) / bins;
    const double edge = events[static_cast<std::size_t>(rank - 1)];
    if (!out.binning.edges.empty() && !(edge > out.binning.edges.back())) {
      throw InvalidArgument("discretize_time: quantile edges are not strictly increasing");
    }
    out.binning.edges.push_back(edge);
  }
  out.bins.reserve(labels.size());
  for (const auto& l : labels) out.bins.push_back(out.binning.bin_of(l.time));
  return out;
}

void assign_bins(const TimeBinning& binning, std::span<SurvivalLabel> labels) {
  for (auto& l : labels) l.bin = binning.bin_of(l.time);
}

std::string_view to_string(RiskGroup group) {
  return group == RiskGroup::high ? "high" : "low";
}

std::vector<RiskGroup> stratify_by_median_risk(std::span<const double> risks) {
  if (risks.size() < 2) throw InvalidArgument("stratify_by_median_risk: need at least two risks");
  std::vector<double> sorted(risks.begin(), risks.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::vector<RiskGroup> groups;
  groups.reserve(n);
  for (double r : risks) groups.push_back(r > median ? RiskGroup::high : RiskGroup::low);
  return groups;
}

}  // namespace vptsurv
