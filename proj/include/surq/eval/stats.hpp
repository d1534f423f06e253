#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "surq/replay/buffer.hpp"

namespace surq::eval {

// Both samples have zero variance: the t statistic is undefined.
class DegenerateSampleError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct WelchResult {
  double t = 0.0;
  double df = 0.0;  // Welch-Satterthwaite
  double p = 1.0;   // two-sided
};

// Requires at least two values per sample; throws std::invalid_argument otherwise.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

// Regularized incomplete beta I_x(a, b), a, b > 0, x in [0, 1].
double regularized_incomplete_beta(double x, double a, double b);

// Two-sided tail probability P(|T| >= |t|) for Student's t with `df` degrees of freedom.
double student_t_two_sided(double t, double df);

struct CurvePoint {
  double driving_hours = 0.0;
  std::size_t agent_lane_changes = 0;  // cumulative
  std::size_t all_lane_changes = 0;    // cumulative, every valid participant incl. the agent
};

// One point per scene transition, in buffer order.
std::vector<CurvePoint> cumulative_lane_change_curve(const replay::ReplayBuffer& buffer);

// Driving hours at which the series first reaches `count`; negative if never.
double hours_to_reach(std::span<const CurvePoint> curve, std::size_t count, bool all_vehicles);

// CSV: driving_hours,agent_lane_changes,all_lane_changes
void write_curve(std::ostream& os, std::span<const CurvePoint> curve);

}  // namespace surq::eval
