#pragma once

// Trials: leader input sources, the run loop, log replay and the synchronous
// autonomous episode.

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "teleop/controller.hpp"
#include "teleop/demo_log.hpp"
#include "teleop/metrics.hpp"
#include "teleop/scenario.hpp"

namespace teleop {

/// Supplies one leader input per control tick.
class InputSource {
 public:
  virtual ~InputSource() = default;
  /// Input for the tick that starts at world time t.
  virtual LeaderInput next(double t) = 0;
  /// Nothing further will change after time t.
  virtual bool exhausted(double t) const = 0;
};

struct ScriptPoint {
  double t = 0.0;
  LeaderInput input;
};

/// Time-stamped leader records, linearly interpolated in q and trigger.
/// Flags take the value of the latest record at or before t. Tick records
/// from a demonstration log are accepted as-is.
class ScriptedDriver : public InputSource {
 public:
  explicit ScriptedDriver(std::vector<ScriptPoint> points) : points_(std::move(points)) {
    if (points_.empty()) throw Error(ErrorCode::EmptyInput, "driver script has no records");
    for (std::size_t k = 1; k < points_.size(); ++k) {
      if (!(points_[k].t > points_[k - 1].t)) {
        throw Error(ErrorCode::SchemaMismatch, "driver script timestamps must increase");
      }
      if (points_[k].input.q.size() != points_[0].input.q.size()) {
        throw Error(ErrorCode::DimensionMismatch, "driver script records differ in length");
      }
    }
  }

  static ScriptedDriver parse(std::istream& in, const std::string& name) {
    std::vector<ScriptPoint> pts;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      try {
        const json j = json::parse(line);
        const std::string type = j.value("type", "tick");
        if (type != "tick") continue;
        pts.push_back({j.at("t").get<double>(), leader_input_from_json(j)});
      } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaMismatch, name + ":" + std::to_string(lineno) + ": " + e.what());
      } catch (const Error& e) {
        throw Error(e.code(), name + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return ScriptedDriver(std::move(pts));
  }

  static ScriptedDriver load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open driver script " + path.string());
    return parse(in, path.string());
  }

  LeaderInput next(double t) override { return at(t); }

  LeaderInput at(double t) const {
    if (t <= points_.front().t) return points_.front().input;
    if (t >= points_.back().t) return points_.back().input;
    const auto it = std::upper_bound(points_.begin(), points_.end(), t,
                                     [](double x, const ScriptPoint& p) { return x < p.t; });
    const ScriptPoint& a = *(it - 1);
    if (a.t == t) return a.input;
    const ScriptPoint& b = *it;
    const double s = (t - a.t) / (b.t - a.t);
    LeaderInput out = a.input;
    out.q = a.input.q + s * (b.input.q - a.input.q);
    out.trigger = a.input.trigger + s * (b.input.trigger - a.input.trigger);
    return out;
  }

  bool exhausted(double t) const override { return t >= points_.back().t; }
  double end_time() const { return points_.back().t; }
  const std::vector<ScriptPoint>& points() const { return points_; }

 private:
  std::vector<ScriptPoint> points_;
};

/// Inputs recorded in a log, one per tick.
class LoggedInputs : public InputSource {
 public:
  explicit LoggedInputs(const std::vector<TickRecord>& records) : records_(records) {}
  LeaderInput next(double) override { return records_.at(i_++).input; }
  bool exhausted(double) const override { return i_ >= records_.size(); }

 private:
  const std::vector<TickRecord>& records_;
  std::size_t i_ = 0;
};

struct TrialOptions {
  /// Stop the run at the next tick boundary when set (signal handling).
  const std::atomic<bool>* stop = nullptr;
  /// Wall-clock pacing; 0 runs as fast as possible.
  double realtime_factor = 0.0;
  /// Called after every tick, e.g. to publish snapshots.
  std::function<void(const Controller&, const TickRecord&)> on_tick;
  /// Keep every record in memory (replay and tests need it).
  bool keep_records = true;
  std::string driver;  // recorded in the log header
};

struct TrialRun {
  DemoLog log;
  TrialResult result;
};

inline SuccessCriteria criteria_for(const Scenario& sc) { return {sc.sim.grasp_tolerance}; }

/// Runs until the input source is exhausted with no autonomous episode in
/// progress, until the scenario time limit, or until asked to stop.
inline TrialRun run_trial(Controller& ctl, InputSource& source, LogWriter* writer,
                          const TrialOptions& opt = {}) {
  TrialRun run;
  run.log.header = ctl.header(opt.driver);
  const double dt = ctl.scenario().sim.dt;
  const double limit = ctl.scenario().max_duration;
  auto wall = std::chrono::steady_clock::now();
  std::string reason;
  TrialEvaluator eval;
  for (;;) {
    const double t = ctl.world().time;
    if (opt.stop && opt.stop->load()) {
      reason = "signal";
      break;
    }
    if (source.exhausted(t) && !ctl.stage2_active()) {
      reason = "completed";
      break;
    }
    if (t + 0.5 * dt >= limit) {
      reason = "timeout";
      break;
    }
    TickRecord rec = ctl.tick(source.next(t));
    if (writer) writer->record(rec);
    if (opt.on_tick) opt.on_tick(ctl, rec);
    eval.add(rec);
    if (opt.keep_records) run.log.records.push_back(std::move(rec));
    if (opt.realtime_factor > 0.0) {
      wall += std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(dt / opt.realtime_factor));
      std::this_thread::sleep_until(wall);
    }
  }
  run.log.end_reason = reason;
  run.result = eval.finish(reason, criteria_for(ctl.scenario()));
  run.log.result = run.result;
  if (writer) {
    writer->end(reason);
    writer->result(run.result);
    writer->flush();
  }
  return run;
}

/// Re-feeds the logged leader inputs through a fresh pipeline with the
/// logged seed. Every record and the final result must match exactly.
inline TrialResult replay_log(const DemoLog& log, const Scenario& sc, double speed = 0.0) {
  if (!(speed >= 0.0) || !std::isfinite(speed)) {
    throw Error(ErrorCode::InvalidArgument, "replay speed must be finite and >= 0");
  }
  if (log.header.scenario_hash != sc.hash) {
    throw Error(ErrorCode::SchemaMismatch, "scenario files changed since the log was recorded");
  }
  if (!log.end_reason || !log.result) {
    throw Error(ErrorCode::IncompleteLog, "log has no end or result record");
  }
  Controller ctl(sc, log.header.seed);
  const double dt = sc.sim.dt;
  auto wall = std::chrono::steady_clock::now();
  DemoLog fresh;
  fresh.header = log.header;
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    TickRecord rec = ctl.tick(log.records[i].input);
    const std::string got = to_json(rec).dump();
    const std::string want = to_json(log.records[i]).dump();
    if (got != want) {
      throw Error(ErrorCode::ReplayDivergence,
                  "record " + std::to_string(i) + " (tick " + std::to_string(log.records[i].tick) +
                      ") differs from the log");
    }
    fresh.records.push_back(std::move(rec));
    if (speed > 0.0) {
      wall += std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(dt / speed));
      std::this_thread::sleep_until(wall);
    }
  }
  fresh.end_reason = log.end_reason;
  const TrialResult result = evaluate_trial(fresh, criteria_for(sc));
  if (!(result == *log.result)) {
    throw Error(ErrorCode::ReplayDivergence, "replayed result differs from the recorded result");
  }
  return result;
}

/// Confirms the acquired tag and runs the autonomous episode to completion
/// with the leader held still. Throws Stage2Aborted when the episode ends
/// through the abort path.
inline StageState run_stage2(Controller& ctl, std::vector<TickRecord>* records = nullptr) {
  if (ctl.stage().mode != Mode::TagAcquired) {
    throw Error(ErrorCode::InvalidTransition,
                "run_stage2 needs TagAcquired, not " + std::string(to_string(ctl.stage().mode)));
  }
  LeaderInput in = ctl.last_input();
  in.abort = false;
  const auto step = [&](const LeaderInput& x) {
    TickRecord r = ctl.tick(x);
    if (records) records->push_back(std::move(r));
  };
  if (in.confirm) {
    in.confirm = false;
    step(in);
  }
  in.confirm = true;
  step(in);
  if (ctl.stage().mode == Mode::TagAcquired) {
    throw Error(ErrorCode::Stage2Aborted, "confirmation was not accepted");
  }
  const double limit = ctl.scenario().max_duration;
  while (ctl.stage2_active()) {
    if (ctl.world().time >= limit) throw Error(ErrorCode::Stage2Aborted, "time limit");
    step(in);
  }
  if (ctl.abort_reason()) throw Error(ErrorCode::Stage2Aborted, *ctl.abort_reason());
  return ctl.stage();
}

}  // namespace teleop
