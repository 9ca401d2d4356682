#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>

#include "spheroview/sim.hpp"

namespace spheroview::sim {

namespace {

double variance(std::span<const double> x) {
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += (v - mean) * (v - mean);
  return s / static_cast<double>(x.size());
}

// Pearson correlation of two equal-length windows; 0 when either is flat.
double window_correlation(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

void require_signal(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 3 || b.size() < 3) throw InvalidArgument("series need at least 3 samples");
  if (!(variance(a) > 0.0) || !(variance(b) > 0.0)) throw Error("no signal");
}

}  // namespace

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InvalidArgument("pearson: series lengths differ");
  require_signal(a, b);
  return window_correlation(a, b);
}

double estimate_lag(const std::vector<double>& a, const std::vector<double>& b, double rate_hz,
                    std::optional<double> max_lag_s) {
  if (a.size() != b.size()) throw InvalidArgument("estimate_lag: series lengths differ");
  if (!(rate_hz > 0)) throw InvalidArgument("estimate_lag: rate must be positive");
  require_signal(a, b);
  const auto n = static_cast<std::ptrdiff_t>(a.size());
  std::ptrdiff_t max_k = max_lag_s ? static_cast<std::ptrdiff_t>(std::ceil(*max_lag_s * rate_hz)) : n / 4;
  max_k = std::clamp<std::ptrdiff_t>(max_k, 1, n - 2);

  // corr[k + max_k] pairs a[i] with b[i + k].
  std::vector<double> corr(static_cast<std::size_t>(2 * max_k + 1));
  for (std::ptrdiff_t k = -max_k; k <= max_k; ++k) {
    const std::ptrdiff_t len = n - std::abs(k);
    const std::span<const double> wa(a.data() + std::max<std::ptrdiff_t>(0, -k), static_cast<std::size_t>(len));
    const std::span<const double> wb(b.data() + std::max<std::ptrdiff_t>(0, k), static_cast<std::size_t>(len));
    corr[static_cast<std::size_t>(k + max_k)] = window_correlation(wa, wb);
  }
  const auto best = static_cast<std::ptrdiff_t>(std::max_element(corr.begin(), corr.end()) - corr.begin());
  double shift = static_cast<double>(best - max_k);
  if (best > 0 && best + 1 < static_cast<std::ptrdiff_t>(corr.size())) {
    const double ym = corr[static_cast<std::size_t>(best - 1)];
    const double y0 = corr[static_cast<std::size_t>(best)];
    const double yp = corr[static_cast<std::size_t>(best + 1)];
    const double denom = ym - 2.0 * y0 + yp;
    if (denom < 0.0) shift += 0.5 * (ym - yp) / denom;
  }
  return shift / rate_hz;
}

ThresholdLags threshold_lags(const std::vector<double>& a, const std::vector<double>& b, double rate_hz,
                             double fraction) {
  if (a.size() != b.size()) throw InvalidArgument("threshold_lags: series lengths differ");
  if (!(fraction > 0 && fraction < 1)) throw InvalidArgument("threshold_lags: fraction must lie in (0, 1)");
  require_signal(a, b);
  auto crossings = [fraction](const std::vector<double>& x) {
    const double thr = fraction * *std::max_element(x.begin(), x.end());
    std::size_t first = x.size(), last = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > thr) {
        first = std::min(first, i);
        last = i;
      }
    return std::pair{first, last};
  };
  const auto [a0, a1] = crossings(a);
  const auto [b0, b1] = crossings(b);
  return {(static_cast<double>(b0) - static_cast<double>(a0)) / rate_hz,
          (static_cast<double>(b1) - static_cast<double>(a1)) / rate_hz};
}

}  // namespace spheroview::sim
