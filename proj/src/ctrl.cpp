#include "nanotile/ctrl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "nanotile/csv.hpp"

namespace nanotile {

namespace {

void check_unit(double x, const char* what) {
  if (!(x >= 0.0 && x <= 1.0)) throw ControlError(std::string(what) + " outside [0, 1]");
}

}  // namespace

double filter_step(double p_prev, double c, double alpha) {
  check_unit(p_prev, "previous probability");
  check_unit(c, "collision probability");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ControlError("filter coefficient outside (0, 1]");
  return (1.0 - alpha) * p_prev + alpha * c;
}

bool stop_decision(double p, double threshold) { return p > threshold; }

double velocity_command(double p, double v_max, double threshold) {
  check_unit(p, "collision probability");
  if (stop_decision(p, threshold)) return 0.0;
  return std::max(0.0, v_max * (1.0 - p));
}

double yaw_rate(double steering_filtered, double gain) { return gain * steering_filtered; }

ControlState control_step(const ControlState& s, double collision, double steering, double v_max) {
  ControlState n = s;
  n.p = filter_step(s.p, collision, s.alpha);
  n.theta = (1.0 - s.alpha) * s.theta + s.alpha * steering;
  n.v = velocity_command(n.p, v_max);
  return n;
}

BrakingEnvelope braking_envelope(double v, double decel) {
  if (v < 0.0) throw ControlError("negative speed");
  if (v == 0.0) return {};
  if (!(decel > 0.0)) throw ControlError("deceleration must be positive");
  return {v / decel, v * v / (2.0 * decel)};
}

double braking_decel(double v, double distance) {
  if (!(v > 0.0 && distance > 0.0)) throw ControlError("speed and distance must be positive");
  return v * v / (2.0 * distance);
}

CollisionTrace::CollisionTrace(std::vector<std::pair<double, double>> points) : points_(std::move(points)) {
  if (points_.empty()) throw ControlError("empty trace");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    check_unit(points_[i].second, "trace value");
    if (i > 0 && points_[i].first <= points_[i - 1].first) throw ControlError("trace timestamps not increasing");
  }
}

double CollisionTrace::at(double t) const {
  if (points_.empty()) throw ControlError("empty trace");
  auto it = std::upper_bound(points_.begin(), points_.end(), t,
                             [](double x, const std::pair<double, double>& p) { return x < p.first; });
  if (it == points_.begin()) return points_.front().second;
  return std::prev(it)->second;
}

CollisionTrace parse_trace(std::istream& is) {
  const auto table = parse_csv(is);
  std::vector<std::pair<double, double>> points;
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    points.emplace_back(table.number(i, "timestamp_s"), table.number(i, "c_k"));
  return CollisionTrace(std::move(points));
}

CollisionTrace read_trace(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw CsvError("file not found: " + file.string());
  return parse_trace(is);
}

CollisionTrace step_trace(double appear, double horizon, double resolution) {
  if (!(appear > 0.0 && horizon > appear + resolution)) throw ControlError("step trace needs 0 < appear < horizon");
  return CollisionTrace({{0.0, 0.0}, {appear, 0.0}, {appear + resolution, 1.0}, {horizon, 1.0}});
}

double ReactionScenario::clearance() const {
  const auto b = braking_envelope(speed, decel);
  return std::max(speed * std::max(b.t_stop, min_stop_time), b.d_stop);
}

ReactionOutcome simulate_reaction(const ReactionScenario& s, const CollisionTrace& trace) {
  if (!(s.speed > 0.0 && s.appear > 0.0 && s.free_distance > 0.0 && s.fps > 0.0 && s.inference >= 0.0))
    throw ControlError("scenario values must be positive");
  const double impact = s.impact_time();
  if (trace.end() < impact) throw ControlError("trace ends before the obstacle is reached");

  ReactionOutcome out;
  out.clearance = s.clearance();
  double p = 0.0;
  for (int k = 0;; ++k) {
    const double t = k / s.fps;
    const double decided = t + s.latency();
    if (decided > impact) break;
    p = filter_step(p, trace.at(t));
    ++out.frames;
    if (stop_decision(p)) {
      out.stop_raised = true;
      out.stop_time = decided;
      break;
    }
  }
  if (!out.stop_raised) return out;
  // Constant approach speed until the command.
  out.distance_at_stop_cmd = s.free_distance - s.speed * std::max(0.0, out.stop_time - s.appear);
  out.stopped_before_obstacle = out.distance_at_stop_cmd >= out.clearance;
  return out;
}

double step_stop_time(double visible, double fps, double latency) {
  const double first = std::ceil(visible * fps) / fps;
  return first + 1.0 / fps + latency;
}

void write_reaction_csv(const std::vector<std::pair<ReactionScenario, ReactionOutcome>>& rows, std::ostream& os) {
  os << "fps,inference_s,stop_raised,stop_time_s,distance_at_stop_m,clearance_m,result\n";
  for (const auto& [s, o] : rows)
    os << s.fps << ',' << s.inference << ',' << (o.stop_raised ? 1 : 0) << ',' << o.stop_time << ','
       << o.distance_at_stop_cmd << ',' << o.clearance << ',' << (o.stopped_before_obstacle ? "stopped" : "collision")
       << '\n';
}

}  // namespace nanotile
