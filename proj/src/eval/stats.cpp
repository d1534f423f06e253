#include "surq/eval/stats.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "surq/errors.hpp"

namespace surq::eval {

namespace {

constexpr int kMaxIterations = 500;
constexpr double kEpsilon = 1e-16;
constexpr double kTiny = 1e-300;

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_continued_fraction(double x, double a, double b) {
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEpsilon) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // unbiased
};

Moments moments(std::span<const double> xs) {
  Moments m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  for (double x : xs) m.variance += (x - m.mean) * (x - m.mean);
  m.variance /= static_cast<double>(xs.size() - 1);
  return m;
}

}  // namespace

double regularized_incomplete_beta(double x, double a, double b) {
  if (!(a > 0 && b > 0)) throw std::invalid_argument("incomplete beta needs a, b > 0");
  if (!(x >= 0 && x <= 1)) throw std::invalid_argument("incomplete beta needs x in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(x, a, b) / a;
  return 1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b;
}

double student_t_two_sided(double t, double df) {
  if (!(df > 0)) throw std::invalid_argument("degrees of freedom must be positive");
  if (std::isnan(t)) throw NumericError("t statistic is NaN");
  if (std::isinf(t)) return 0.0;
  return regularized_incomplete_beta(df / (df + t * t), 0.5 * df, 0.5);
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("Welch's t-test needs at least two values per sample");
  const auto ma = moments(a), mb = moments(b);
  const double sa = ma.variance / static_cast<double>(a.size());
  const double sb = mb.variance / static_cast<double>(b.size());
  const double se2 = sa + sb;
  if (!(se2 > 0.0)) throw DegenerateSampleError("both samples have zero variance");
  WelchResult r;
  r.t = (ma.mean - mb.mean) / std::sqrt(se2);
  r.df = se2 * se2 /
         (sa * sa / static_cast<double>(a.size() - 1) + sb * sb / static_cast<double>(b.size() - 1));
  r.p = student_t_two_sided(r.t, r.df);
  return r;
}

std::vector<CurvePoint> cumulative_lane_change_curve(const replay::ReplayBuffer& buffer) {
  std::vector<CurvePoint> curve;
  curve.reserve(buffer.size());
  const double step_hours = buffer.header().action_dt / 3600.0;
  std::size_t agent = 0, all = 0;
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const auto& k = buffer[i];
    for (std::size_t p = 0; p < k.actions.size(); ++p) {
      if (!k.valid[p] || !is_lane_change(k.actions[p])) continue;
      ++all;
      if (p == 0) ++agent;
    }
    curve.push_back({static_cast<double>(i + 1) * step_hours, agent, all});
  }
  return curve;
}

double hours_to_reach(std::span<const CurvePoint> curve, std::size_t count, bool all_vehicles) {
  for (const auto& c : curve) {
    if ((all_vehicles ? c.all_lane_changes : c.agent_lane_changes) >= count) return c.driving_hours;
  }
  return -1.0;
}

void write_curve(std::ostream& os, std::span<const CurvePoint> curve) {
  os << "driving_hours,agent_lane_changes,all_lane_changes\n";
  char buf[32];
  for (const auto& c : curve) {
    std::snprintf(buf, sizeof buf, "%.17g", c.driving_hours);
    os << buf << ',' << c.agent_lane_changes << ',' << c.all_lane_changes << '\n';
  }
}

}  // namespace surq::eval
