#pragma once

// Independent reference implementations used by the tests. They are written
// for clarity, not speed, and share no code with the library.

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "vptsurv/image.hpp"
#include "vptsurv/survival.hpp"

namespace oracle {

/// O(n^2) enumeration of Harrell's comparable pairs.
inline double concordance(const std::vector<double>& risk, const std::vector<vptsurv::SurvivalLabel>& label) {
  double score = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < risk.size(); ++i) {
    for (std::size_t j = 0; j < risk.size(); ++j) {
      if (label[i].censored || !(label[i].time < label[j].time)) continue;
      ++pairs;
      if (risk[i] > risk[j]) {
        score += 1.0;
      } else if (risk[i] == risk[j]) {
        score += 0.5;
      }
    }
  }
  return score / static_cast<double>(pairs);
}

/// Product-limit estimate evaluated right after `t`, straight from the
/// definition: multiply (1 - d/n) over every distinct event time <= t.
inline double kaplan_meier_at(const std::vector<vptsurv::SurvivalLabel>& labels, double t) {
  std::vector<double> event_times;
  for (const auto& l : labels) {
    if (!l.censored && l.time <= t) event_times.push_back(l.time);
  }
  std::vector<double> distinct;
  for (double e : event_times) {
    bool seen = false;
    for (double d : distinct) seen = seen || d == e;
    if (!seen) distinct.push_back(e);
  }
  double s = 1.0;
  for (double e : distinct) {
    double at_risk = 0.0, deaths = 0.0;
    for (const auto& l : labels) {
      if (l.time >= e) at_risk += 1.0;
      if (!l.censored && l.time == e) deaths += 1.0;
    }
    s *= 1.0 - deaths / at_risk;
  }
  return s;
}

/// High-pass via an O(N^4) direct 2-D DFT: coefficients within
/// cutoff * Nyquist radius of DC are zeroed (frequencies wrapped to
/// [-N/2, N/2) per axis, radius normalised per axis).
inline vptsurv::Image dft_high_pass(const vptsurv::Image& img, double cutoff) {
  const int h = img.height, w = img.width;
  using C = std::complex<double>;
  std::vector<C> spec(static_cast<std::size_t>(h) * w);
  for (int u = 0; u < h; ++u) {
    for (int v = 0; v < w; ++v) {
      C acc = 0.0;
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
          const double phase = -2.0 * M_PI * (static_cast<double>(u) * r / h + static_cast<double>(v) * c / w);
          acc += static_cast<double>(img(r, c)) * C(std::cos(phase), std::sin(phase));
        }
      }
      const double fu = (u < (h + 1) / 2 ? u : u - h) / (h / 2.0);
      const double fv = (v < (w + 1) / 2 ? v : v - w) / (w / 2.0);
      if (std::sqrt(fu * fu + fv * fv) <= cutoff) acc = 0.0;
      spec[static_cast<std::size_t>(u) * w + v] = acc;
    }
  }
  vptsurv::Image out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      C acc = 0.0;
      for (int u = 0; u < h; ++u) {
        for (int v = 0; v < w; ++v) {
          const double phase = 2.0 * M_PI * (static_cast<double>(u) * r / h + static_cast<double>(v) * c / w);
          acc += spec[static_cast<std::size_t>(u) * w + v] * C(std::cos(phase), std::sin(phase));
        }
      }
      out(r, c) = static_cast<float>(acc.real() / (static_cast<double>(h) * w));
    }
  }
  return out;
}

/// Central difference of f at x along coordinate i.
template <typename F>
double central_difference(F&& f, std::vector<double> x, std::size_t i, double step = 1e-5) {
  const double x0 = x[i];
  x[i] = x0 + step;
  const double plus = f(x);
  x[i] = x0 - step;
  const double minus = f(x);
  return (plus - minus) / (2.0 * step);
}

}  // namespace oracle
