#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "common.hpp"
#include "nanotile/ctrl.hpp"

using namespace nanotile;

namespace {

// Per-frame processing time at the cheapest operating point reaching `fps`.
double inference_at(double fps) {
  const auto& c = testutil::calibration();
  const auto rows = sweep(testutil::dronet(), c.schedule, default_grid(), c.calib, c.power);
  const SweepRow* best = nullptr;
  for (const auto& r : rows)
    if (r.fps >= fps && (!best || r.energy_mj < best->energy_mj)) best = &r;
  REQUIRE(best != nullptr);
  return 1.0 / best->fps;
}

ReactionOutcome react(double fps, ReactionScenario* out = nullptr) {
  ReactionScenario s;
  s.fps = fps;
  s.inference = inference_at(fps);
  if (out) *out = s;
  return simulate_reaction(s, step_trace(s.appear, 10.0));
}

}  // namespace

TEST_SUITE("ctrl") {

TEST_CASE("low-pass filter") {
  CHECK(filter_step(0.0, 1.0) == doctest::Approx(0.7));
  CHECK(filter_step(0.7, 1.0) == doctest::Approx(0.91));
  CHECK(filter_step(0.4, 0.4) == doctest::Approx(0.4));
  CHECK(filter_step(0.2, 0.9, 1.0) == doctest::Approx(0.9));
  CHECK_THROWS_AS(filter_step(0.2, 0.9, 0.0), ControlError);
  CHECK_THROWS_AS(filter_step(0.5, 1.5), ControlError);
  CHECK_THROWS_AS(filter_step(-0.1, 0.5), ControlError);
  CHECK_THROWS_AS(filter_step(0.5, 0.5, 1.2), ControlError);
}

TEST_CASE("filter output stays between its inputs") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double p = u(rng), c = u(rng), a = 1.0 - u(rng);
    const double q = filter_step(p, c, a);
    REQUIRE(q >= std::min(p, c) - 1e-15);
    REQUIRE(q <= std::max(p, c) + 1e-15);
    REQUIRE(q == doctest::Approx(p + a * (c - p)));
  }
}

TEST_CASE("stop threshold and velocity") {
  CHECK_FALSE(stop_decision(0.7));
  CHECK(stop_decision(0.7000001));
  CHECK(velocity_command(0.5, 4.0) == doctest::Approx(2.0));
  CHECK(velocity_command(0.0, 4.0) == doctest::Approx(4.0));
  CHECK(velocity_command(0.71, 4.0) == 0.0);
  CHECK(yaw_rate(0.25) == doctest::Approx(0.25));

  ControlState s;
  s = control_step(s, 1.0, 0.5, 4.0);
  CHECK(s.p == doctest::Approx(0.7));
  CHECK(s.theta == doctest::Approx(0.35));
  CHECK(s.v == doctest::Approx(4.0 * 0.3));
  s = control_step(s, 1.0, 0.5, 4.0);
  CHECK(s.v == 0.0);
}

TEST_CASE("braking envelope") {
  const double a = braking_decel();
  CHECK(a == doctest::Approx(16.0 / 1.4));
  const auto b = braking_envelope(4.0, a);
  CHECK(b.d_stop == doctest::Approx(0.7));
  CHECK(b.t_stop == doctest::Approx(0.35));
  const auto z = braking_envelope(0.0, a);
  CHECK(z.t_stop == 0.0);
  CHECK(z.d_stop == 0.0);
  CHECK_THROWS_AS(braking_envelope(4.0, 0.0), ControlError);
  CHECK(ReactionScenario{}.clearance() == doctest::Approx(1.6));
}

TEST_CASE("trace parsing") {
  std::istringstream is("# comment\ntimestamp_s,c_k\n0,0\n0.5,0.2\n1.0,0.9\n");
  const auto t = parse_trace(is);
  CHECK(t.points().size() == 3);
  CHECK(t.at(-1.0) == 0.0);
  CHECK(t.at(0.7) == doctest::Approx(0.2));
  CHECK(t.at(1.0) == doctest::Approx(0.9));
  CHECK(t.end() == doctest::Approx(1.0));
  std::istringstream bad("timestamp_s,c_k\n0,0\n0.5,1.5\n");
  CHECK_THROWS(parse_trace(bad));
  std::istringstream unordered("timestamp_s,c_k\n1,0\n0.5,0.1\n");
  CHECK_THROWS(parse_trace(unordered));
  CHECK_THROWS_WITH(read_trace("/nonexistent/trace.csv"), doctest::Contains("file not found"));

  const auto s = step_trace(2.0, 5.0);
  CHECK(s.at(2.0) == 0.0);
  CHECK(s.at(2.001) == 1.0);
  CHECK(s.end() >= 5.0);
}

TEST_CASE("step stop time is the two-sample prediction") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> appear(1.0, 5.0), fps(2.0, 40.0), inf(0.0, 0.1);
  for (int i = 0; i < 500; ++i) {
    ReactionScenario s;
    s.appear = appear(rng);
    s.fps = fps(rng);
    s.inference = std::min(inf(rng), 0.9 / s.fps);
    s.free_distance = 50.0;
    const auto o = simulate_reaction(s, step_trace(s.appear, 30.0));
    REQUIRE(o.stop_raised);
    // Independent form: first frame strictly after the step, then one more frame.
    const double visible = s.appear + 1e-3;
    const int k = static_cast<int>(std::ceil(visible * s.fps - 1e-9));
    const double expect = (k + 1) / s.fps + 1.0 / s.fps + s.inference;
    REQUIRE(o.stop_time == doctest::Approx(expect));
    REQUIRE(o.stop_time == doctest::Approx(step_stop_time(visible, s.fps, s.latency())));
  }
}

TEST_CASE("reaction at 10 Hz and 5 Hz") {
  ReactionScenario s10, s5;
  const auto o10 = react(10.0, &s10);
  const auto o5 = react(5.0, &s5);
  MESSAGE("10 Hz: stop at ", o10.stop_time, " s with ", o10.distance_at_stop_cmd, " m left");
  MESSAGE("5 Hz: stop at ", o5.stop_time, " s with ", o5.distance_at_stop_cmd, " m left");
  CHECK(s10.inference <= 0.1);
  CHECK(o10.stop_raised);
  CHECK(o10.stopped_before_obstacle);
  CHECK(o10.distance_at_stop_cmd >= o10.clearance);
  CHECK_FALSE(o5.stopped_before_obstacle);
  CHECK(o5.distance_at_stop_cmd < o5.clearance);

  std::ostringstream os;
  write_reaction_csv({{s10, o10}, {s5, o5}}, os);
  CHECK(os.str().find("stopped") != std::string::npos);
  CHECK(os.str().find("collision") != std::string::npos);
}

TEST_CASE("a much faster camera never stops later") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> appear(1.0, 5.0), fps(1.0, 40.0), ratio(1.5, 4.0);
  for (int i = 0; i < 2000; ++i) {
    const double f1 = fps(rng), f2 = f1 * ratio(rng), a = appear(rng);
    ReactionScenario s1, s2;
    s1.appear = s2.appear = a;
    s1.free_distance = s2.free_distance = 100.0;
    s1.fps = f1;
    s2.fps = f2;
    const auto trace = step_trace(a, 40.0);
    REQUIRE(simulate_reaction(s2, trace).stop_time <= simulate_reaction(s1, trace).stop_time + 1e-12);
  }
}

TEST_CASE("scenario errors") {
  ReactionScenario s;
  CHECK_THROWS_AS(simulate_reaction(s, step_trace(s.appear, 4.5)), ControlError);
  s.fps = 0.0;
  CHECK_THROWS_AS(simulate_reaction(s, step_trace(4.0, 10.0)), ControlError);
}

}
