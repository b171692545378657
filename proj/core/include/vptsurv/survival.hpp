#pragma once

#include <span>
#include <string_view>
#include <vector>

namespace vptsurv {

/// Hazards are clamped into [eps, 1 - eps] before any logarithm.
inline constexpr double kHazardEpsilon = 1e-7;

/// Right-censored survival outcome. `censored == true` means the event was
/// not observed before `time`; `bin` is the 1-based discrete time bin.
struct SurvivalLabel {
  double time = 0.0;
  bool censored = false;
  int bin = 1;
};

/// Discrete-time hazards h(1..T) and the survival curve S(t) = prod_{u<=t}(1 - h(u)).
struct HazardPrediction {
  std::vector<double> hazards;
  std::vector<double> survival;

  /// Clamps and validates `hazards`, then derives the survival curve.
  static HazardPrediction from_hazards(std::span<const double> hazards);

  int bins() const { return static_cast<int>(hazards.size()); }

  /// Expected cumulative incidence, sum_t (1 - S(t)). Larger means riskier.
  double risk() const;
};

/// Clamps each value into [eps, 1 - eps]. Throws InvalidArgument for empty
/// input or values outside [0, 1] (NaN included).
std::vector<double> clamp_hazards(std::span<const double> hazards);

/// Cumulative product of (1 - h) after clamping.
std::vector<double> hazard_to_survival(std::span<const double> hazards);

/// sum_t (1 - S(t)).
double risk_from_survival(std::span<const double> survival);

/// Censored discrete-time negative log-likelihood of one sample:
///   censored: -log S(bin)
///   event:    -log S(bin - 1) - log h(bin),  with S(0) = 1.
double nll_survival_loss(const HazardPrediction& pred, const SurvivalLabel& label);

/// Same loss evaluated on raw hazards; writes dloss/dhazard into `grad`
/// (resized to hazards.size()). Clamped coordinates get zero gradient.
double nll_survival_loss(std::span<const double> hazards, const SurvivalLabel& label,
                         std::vector<double>* grad);

/// Mean loss over a batch.
double nll_survival_loss(std::span<const HazardPrediction> preds,
                         std::span<const SurvivalLabel> labels);

/// Harrell's concordance index. A pair (i, j) is comparable when
/// time_i < time_j and i had an event; it scores 1 if risk_i > risk_j and
/// 0.5 on a risk tie. Equal times are never comparable.
/// Throws UndefinedMetric when there is no comparable pair.
double concordance_index(std::span<const double> risks, std::span<const SurvivalLabel> labels);

/// Product-limit survival estimate, one step per distinct event time.
struct SurvivalCurveEstimate {
  std::vector<double> event_times;
  std::vector<double> survival_probs;

  /// Right-continuous step value at `time` (1 before the first event).
  double at(double time) const;
};

SurvivalCurveEstimate kaplan_meier(std::span<const SurvivalLabel> labels);

/// Bins (-inf, e1], (e1, e2], ..., (e_{T-1}, inf).
struct TimeBinning {
  std::vector<double> edges;

  int bins() const { return static_cast<int>(edges.size()) + 1; }
  /// 1-based bin containing `time`.
  int bin_of(double time) const;
};

struct Discretization {
  TimeBinning binning;
  std::vector<int> bins;  // parallel to the input labels, 1-based
};

/// Edges at the k/T nearest-rank quantiles of uncensored event times.
/// Throws InvalidArgument when there are fewer than T events or the edges
/// are not strictly increasing.
Discretization discretize_time(std::span<const SurvivalLabel> labels, int bins);

/// Re-labels `labels` in place with bins from `binning`.
void assign_bins(const TimeBinning& binning, std::span<SurvivalLabel> labels);

enum class RiskGroup { low, high };

std::string_view to_string(RiskGroup group);

/// risk > median -> high, otherwise low.
std::vector<RiskGroup> stratify_by_median_risk(std::span<const double> risks);

}  // namespace vptsurv
