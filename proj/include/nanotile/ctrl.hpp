#pragma once

#include <filesystem>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <utility>
#include <vector>

namespace nanotile {

inline constexpr double kFilterAlpha = 0.7;
inline constexpr double kStopThreshold = 0.7;
// Braking figures for the nano-drone at 4 m/s.
inline constexpr double kBrakingSpeed = 4.0;
inline constexpr double kBrakingDistance = 0.7;
inline constexpr double kMinStoppingTime = 0.4;

class ControlError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// p_k = (1 - alpha) p_{k-1} + alpha c_k
double filter_step(double p_prev, double c, double alpha = kFilterAlpha);
// Strictly above the threshold.
bool stop_decision(double p, double threshold = kStopThreshold);
// v_max (1 - p), and zero once the stop fires.
double velocity_command(double p, double v_max, double threshold = kStopThreshold);
double yaw_rate(double steering_filtered, double gain = 1.0);

struct ControlState {
  double p = 0.0;      // filtered collision probability
  double theta = 0.0;  // filtered steering angle, rad
  double v = 0.0;      // commanded forward velocity, m/s
  double alpha = kFilterAlpha;
};

// One network output through both filters and the velocity law.
ControlState control_step(const ControlState& s, double collision, double steering, double v_max);

struct BrakingEnvelope {
  double t_stop = 0.0;
  double d_stop = 0.0;
};

// Constant deceleration: t = v / a, d = v^2 / (2 a).
BrakingEnvelope braking_envelope(double v, double decel);
// Deceleration that stops from `v` within `distance`.
double braking_decel(double v = kBrakingSpeed, double distance = kBrakingDistance);

// Collision probability over time, held between samples.
class CollisionTrace {
 public:
  CollisionTrace() = default;
  explicit CollisionTrace(std::vector<std::pair<double, double>> points);

  // Value of the latest sample at or before t; the first sample before it.
  double at(double t) const;
  double end() const { return points_.empty() ? 0.0 : points_.back().first; }
  const std::vector<std::pair<double, double>>& points() const { return points_; }

 private:
  std::vector<std::pair<double, double>> points_;
};

CollisionTrace parse_trace(std::istream& is);
CollisionTrace read_trace(const std::filesystem::path& file);
// c = 0 up to and including `appear`, 1 from one `resolution` step later.
CollisionTrace step_trace(double appear, double horizon, double resolution = 1e-3);

struct ReactionScenario {
  double speed = kBrakingSpeed;  // approach speed, m/s
  double appear = 4.0;           // obstacle appearance time, s
  double free_distance = 4.0;    // distance left when it appears, m
  double fps = 10.0;
  double inference = 0.0;        // per-frame processing time, s
  double decel = braking_decel();
  double min_stop_time = kMinStoppingTime;

  // From a frame's capture to the decision it drives.
  double latency() const { return 1.0 / fps + inference; }
  double impact_time() const { return appear + free_distance / speed; }
  // Distance needed at the stop command: enough time and enough room to brake.
  double clearance() const;
};

struct ReactionOutcome {
  bool stop_raised = false;
  double stop_time = 0.0;
  double distance_at_stop_cmd = 0.0;  // left to the obstacle, m
  double clearance = 0.0;
  bool stopped_before_obstacle = false;
  int frames = 0;
};

// Frames are captured at k / fps from t = 0.
ReactionOutcome simulate_reaction(const ReactionScenario& scenario, const CollisionTrace& trace);

// Stop command time for a clean step visible from `visible`: the first frame
// at or after it, one more frame to cross the threshold, plus the latency.
double step_stop_time(double visible, double fps, double latency);

void write_reaction_csv(const std::vector<std::pair<ReactionScenario, ReactionOutcome>>& rows, std::ostream& os);

}  // namespace nanotile
