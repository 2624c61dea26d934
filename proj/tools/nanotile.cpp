#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <random>

#include "nanotile/cost.hpp"
#include "nanotile/csv.hpp"
#include "nanotile/ctrl.hpp"
#include "nanotile/exec.hpp"
#include "nanotile/metrics.hpp"
#include "nanotile/offload.hpp"

using namespace nanotile;

namespace {

struct Session {
  NetworkGraph graph = build_dronet();
  std::optional<Calibration> cal;

  const Calibration& calibration() {
    if (!cal) cal = calibrate(graph, load_targets(data_dir()));
    return *cal;
  }
  TileSchedule schedule(int64_t l1_budget) {
    const auto& c = calibration();
    if (l1_budget == c.schedule.l1_budget) return c.schedule;
    return plan_network(graph, l1_budget, plan_cost(c.calib));
  }
  CostReport report(const OperatingPoint& op) {
    const auto& c = calibration();
    return frame_report(graph, c.schedule, op, c.calib, c.power);
  }
  // Least energy per frame among grid points reaching `fps`; the fastest point otherwise.
  SweepRow point_for_rate(double fps) {
    const auto& c = calibration();
    const auto rows = sweep(graph, c.schedule, default_grid(), c.calib, c.power);
    const SweepRow* best = nullptr;
    for (const auto& r : rows)
      if (r.fps >= fps && (!best || r.energy_mj < best->energy_mj)) best = &r;
    if (!best)
      for (const auto& r : rows)
        if (!best || r.fps > best->fps) best = &r;
    return *best;
  }
};

int run_infer(Session& s, const std::string& weights_file, const std::string& image_file, bool tiled,
              int64_t l1_budget, bool csv) {
  const auto weights = load_weights(weights_file, s.graph);
  const auto input = load_image(image_file);
  const auto ref = infer_untiled(s.graph, weights, input, Arithmetic::Q412);

  std::optional<bool> exact;
  if (tiled) {
    const auto schedule = s.schedule(l1_budget);
    const auto l2 = plan_two_stack(s.graph, l2_sizes(s.graph));
    MemSim mem;
    const auto run = execute_schedule(s.graph, schedule, l2, weights, input, mem);
    exact = run.prediction.steering_raw.raw == ref.steering_raw.raw && run.prediction.logit_raw.raw == ref.logit_raw.raw;
  }

  char line[96];
  if (csv) {
    std::cout << "steering,collision" << (exact ? ",bit_exact" : "") << '\n';
    std::snprintf(line, sizeof line, "%.4f,%.4f", ref.steering, ref.collision);
    std::cout << line << (exact ? (*exact ? ",1" : ",0") : "") << '\n';
  } else {
    std::snprintf(line, sizeof line, "steering %.4f, collision %.4f", ref.steering, ref.collision);
    std::cout << line << '\n';
    if (exact) std::cout << "bit-exact vs untiled: " << (*exact ? "yes" : "no") << '\n';
  }
  return exact.value_or(true) ? 0 : 1;
}

int run_react(Session& s, double fps, const std::string& trace_file, std::optional<double> inference, double appear,
              double distance, bool csv) {
  ReactionScenario sc;
  sc.fps = fps;
  sc.appear = appear;
  sc.free_distance = distance;
  std::optional<SweepRow> point;
  if (inference) {
    sc.inference = *inference;
  } else {
    point = s.point_for_rate(fps);
    sc.inference = 1.0 / point->fps;
  }
  const auto trace = trace_file.empty() ? step_trace(appear, sc.impact_time() + 1.0) : read_trace(trace_file);
  const auto out = simulate_reaction(sc, trace);
  if (csv) {
    write_reaction_csv({{sc, out}}, std::cout);
    return 0;
  }
  std::printf("rate %.1f Hz, inference %.1f ms", fps, sc.inference * 1e3);
  if (point) std::printf(" (VDD %.1f V, FC %.0f MHz, CL %.0f MHz)", point->op.vdd, point->op.f_fc_mhz, point->op.f_cl_mhz);
  std::printf("\nobstacle at %.2f s, %.2f m ahead at %.1f m/s; impact at %.3f s\n", appear, distance, sc.speed,
              sc.impact_time());
  if (!out.stop_raised) {
    std::printf("no stop command before impact after %d frames\nresult: collision\n", out.frames);
    return 0;
  }
  std::printf("stop command at %.3f s after %d frames, %.3f m left, %.2f m needed\nresult: %s\n", out.stop_time,
              out.frames, out.distance_at_stop_cmd, out.clearance,
              out.stopped_before_obstacle ? "stopped before the obstacle" : "collision");
  return 0;
}

int run_mission_cmd(Session& s, int frames, const OperatingPoint& op, double dma_ms, double result_ms, bool csv) {
  MissionTimings t;
  t.compute_s = s.report(op).frame_seconds;
  t.frame_dma_s = dma_ms * 1e-3;
  t.result_s = result_ms * 1e-3;
  const auto tl = run_mission(frames, t);
  const auto bad = validate_timeline(tl);
  if (csv) {
    write_timeline_csv(tl, std::cout);
  } else {
    std::printf("%5s  %-15s %-12s %12s %12s\n", "frame", "step", "actor", "start ms", "end ms");
    for (const auto& e : tl.events)
      std::printf("%5d  %-15s %-12s %12.3f %12.3f\n", e.frame, to_string(e.step), to_string(e.actor),
                  to_seconds(e.start) * 1e3, to_seconds(e.end) * 1e3);
    const double period = to_seconds(steady_state_period(tl));
    if (period > 0) std::printf("steady-state period %.3f ms, %.2f fps\n", period * 1e3, 1.0 / period);
    std::printf("overlapped frame transfers %d, live frame buffers at most %d\n", overlap_count(tl),
                max_live_buffers(tl));
    std::printf("timeline %s\n", bad.empty() ? "valid" : "INVALID");
  }
  for (const auto& b : bad) std::cerr << "violation: " << b << '\n';
  return bad.empty() ? 0 : 1;
}

int run_metrics(const std::string& pred, const std::string& labels, bool csv) {
  const auto m = evaluate_metrics(pred, labels);
  if (csv) {
    std::cout << "metric,value\n";
    if (m.steering) std::printf("eva,%.6f\nrmse,%.6f\n", m.steering->eva, m.steering->rmse);
    if (m.collision) std::printf("accuracy,%.6f\nf1,%.6f\n", m.collision->accuracy, m.collision->f1);
  } else {
    if (m.steering) std::printf("EVA %.4f, RMSE %.4f\n", m.steering->eva, m.steering->rmse);
    if (m.collision) std::printf("Accuracy %.4f, F1 %.4f\n", m.collision->accuracy, m.collision->f1);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DroNet fixed-point inference, tiling and deployment models"};
  app.require_subcommand(1);
  app.fallthrough();
  bool csv = false;
  app.add_flag("--csv", csv, "Machine-readable CSV output");

  std::string weights_file, image_file;
  bool tiled = false;
  int64_t l1_budget = kDefaultL1Budget;
  auto* infer = app.add_subcommand("infer", "Run one frame through the network");
  infer->add_option("--weights", weights_file, "Weight file")->required();
  infer->add_option("--image", image_file, "Grayscale PGM image")->required();
  infer->add_flag("--tiled", tiled, "Also run the tiled schedule and compare");
  infer->add_option("--l1-budget", l1_budget, "L1 budget in bytes")->capture_default_str();

  auto* plan = app.add_subcommand("plan", "Tiling schedule");
  plan->add_option("--l1-budget", l1_budget, "L1 budget in bytes")->capture_default_str();

  bool single = false;
  auto* mem = app.add_subcommand("mem", "L2 allocation plan");
  mem->add_flag("--single", single, "Single stack instead of two");

  OperatingPoint op;
  auto add_op = [&](CLI::App* cmd) {
    cmd->add_option("--vdd", op.vdd, "Supply voltage, V")->capture_default_str();
    cmd->add_option("--fc", op.f_fc_mhz, "Fabric controller clock, MHz")->capture_default_str();
    cmd->add_option("--cl", op.f_cl_mhz, "Cluster clock, MHz")->capture_default_str();
  };
  auto* cost = app.add_subcommand("cost", "Per-frame cost at one operating point");
  add_op(cost);
  auto* sweep_cmd = app.add_subcommand("sweep", "Cost over the operating point grid");
  auto* calib = app.add_subcommand("calibrate", "Fitted parameters and residuals");

  double fps = 10.0, appear = 4.0, distance = 4.0;
  std::optional<double> inference;
  std::string trace_file;
  auto* react = app.add_subcommand("react", "Obstacle reaction at a frame rate");
  react->add_option("--fps", fps, "Frame rate, Hz")->capture_default_str();
  react->add_option("--trace", trace_file, "CSV of timestamp_s,c_k; a clean step when omitted");
  react->add_option("--inference", inference, "Per-frame inference time, s; from the cost model when omitted");
  react->add_option("--appear", appear, "Obstacle appearance time, s")->capture_default_str();
  react->add_option("--distance", distance, "Free distance when it appears, m")->capture_default_str();

  int frames = 10;
  double dma_ms = 5.0, result_ms = 0.1;
  auto* mission = app.add_subcommand("mission", "Host-accelerator protocol timeline");
  mission->add_option("--frames", frames, "Frames to process")->capture_default_str();
  mission->add_option("--dma-ms", dma_ms, "Frame acquisition time, ms")->capture_default_str();
  mission->add_option("--result-ms", result_ms, "Result transfer time, ms")->capture_default_str();
  add_op(mission);

  std::string pred_file, label_file;
  auto* metrics = app.add_subcommand("metrics", "EVA, RMSE, accuracy and F1 of a prediction file");
  metrics->add_option("--predictions", pred_file, "CSV with steering and/or collision columns")->required();
  metrics->add_option("--labels", label_file, "CSV with the same columns")->required();

  std::optional<uint64_t> seed;
  std::string out_file;
  auto* gen_w = app.add_subcommand("gen-weights", "Write a weight file: zeros, or random with --seed");
  gen_w->add_option("--seed", seed, "Random seed");
  gen_w->add_option("-o,--out", out_file, "Output file")->required();
  auto* gen_i = app.add_subcommand("gen-image", "Write a random 200x200 PGM image");
  gen_i->add_option("--seed", seed, "Random seed");
  gen_i->add_option("-o,--out", out_file, "Output file")->required();

  CLI11_PARSE(app, argc, argv);

  Session s;
  try {
    if (*infer) return run_infer(s, weights_file, image_file, tiled, l1_budget, csv);
    if (*plan) write_schedule(s.schedule(l1_budget), std::cout, csv);
    if (*mem) {
      const auto sizes = l2_sizes(s.graph);
      write_l2_plan(single ? plan_single_stack_plan(s.graph, sizes) : plan_two_stack(s.graph, sizes), std::cout, csv);
    }
    if (*cost) write_report(s.report(op), std::cout, csv);
    if (*sweep_cmd) {
      const auto& c = s.calibration();
      write_sweep(sweep(s.graph, c.schedule, default_grid(), c.calib, c.power), std::cout, csv);
    }
    if (*calib) write_calibration(s.calibration(), std::cout);
    if (*react) return run_react(s, fps, trace_file, inference, appear, distance, csv);
    if (*mission) return run_mission_cmd(s, frames, op, dma_ms, result_ms, csv);
    if (*metrics) return run_metrics(pred_file, label_file, csv);
    if (*gen_w) save_weights(seed ? random_weights(s.graph, *seed) : zero_weights(s.graph), out_file);
    if (*gen_i) {
      std::mt19937_64 rng(seed.value_or(0));
      GrayImage img{200, 200, std::vector<uint8_t>(200 * 200)};
      for (auto& p : img.pixels) p = static_cast<uint8_t>(rng() & 0xff);
      write_pgm(img, out_file);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
