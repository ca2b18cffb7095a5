#pragma once

// Trial evaluation from a demonstration log and the summary table over trials.

#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "teleop/demo_log.hpp"
#include "teleop/error.hpp"
#include "teleop/simworld.hpp"

namespace teleop {

struct SuccessCriteria {
  GraspTolerance alignment;  // allowed e_p / e_R at the grasp instant
};

/// Folds tick records into a result one at a time, so long runs need not
/// keep their records.
class TrialEvaluator {
 public:
  void add(const TickRecord& rec) {
    for (const auto& e : rec.events) {
      if (e.kind == "collision") {
        ++r_.collisions;
      } else if (e.kind == "align") {
        r_.e_p = e.data.at("e_p").get<double>();
        r_.e_r = e.data.at("e_R").get<double>();
      } else if (e.kind == "lift" && !lift_time_) {
        lift_time_ = e.data.at("since_first_command").get<double>();
      } else if (e.kind == "abort") {
        r_.abort_reason = e.data.at("reason").get<std::string>();
      }
    }
    last_t_ = rec.t;
  }

  /// Success needs no collision events, alignment within tolerance when the
  /// gripper closed, and the object attached and lifted. Time runs from the
  /// first leader command to the lift.
  TrialResult finish(const std::string& end_reason, const SuccessCriteria& criteria) const {
    TrialResult r = r_;
    if (!r.abort_reason && end_reason != "completed") r.abort_reason = end_reason;
    const bool aligned = r.e_p && r.e_r && *r.e_p <= criteria.alignment.position &&
                         *r.e_r <= criteria.alignment.orientation;
    r.success = r.collisions == 0 && aligned && lift_time_.has_value();
    if (r.success) {
      r.completion_time = *lift_time_;
    } else if (last_t_) {
      r.completion_time = *last_t_;
    }
    return r;
  }

 private:
  TrialResult r_;
  std::optional<double> lift_time_;
  std::optional<double> last_t_;
};

inline TrialResult evaluate_trial(const DemoLog& log, const SuccessCriteria& criteria) {
  if (!log.end_reason) throw Error(ErrorCode::IncompleteLog, "log has no end record");
  TrialEvaluator ev;
  for (const auto& rec : log.records) ev.add(rec);
  return ev.finish(*log.end_reason, criteria);
}

struct Summary {
  std::size_t trials = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;           // %
  std::optional<double> mean_time;     // over successful trials
  std::optional<double> mean_e_p;      // over trials that reached the grasp
  std::optional<double> mean_e_r;
  double collision_rate = 0.0;         // % of trials with at least one collision
};

/// Figures reported for the physical leader-follower system on the same kind
/// of task. Kept for side-by-side reading; never used as a pass criterion.
struct ReferenceRow {
  double success_rate;    // %
  double mean_time;       // s
  double mean_e_p;        // m
  double mean_e_r;        // rad
  double collision_rate;  // %
};
inline constexpr ReferenceRow kHardwareReference{80.0, 43.56, 0.02, 0.087, 5.0};

inline Summary aggregate(std::span<const TrialResult> results) {
  if (results.empty()) throw Error(ErrorCode::EmptyInput, "no trial results to aggregate");
  Summary s;
  s.trials = results.size();
  double t = 0.0, ep = 0.0, er = 0.0;
  std::size_t reached = 0, collided = 0;
  for (const auto& r : results) {
    if (r.success) {
      ++s.successes;
      t += r.completion_time;
    }
    if (r.reached_grasp()) {
      ++reached;
      ep += *r.e_p;
      er += r.e_r.value_or(0.0);
    }
    if (r.collisions > 0) ++collided;
  }
  const double n = static_cast<double>(s.trials);
  s.success_rate = 100.0 * static_cast<double>(s.successes) / n;
  s.collision_rate = 100.0 * static_cast<double>(collided) / n;
  if (s.successes) s.mean_time = t / static_cast<double>(s.successes);
  if (reached) {
    s.mean_e_p = ep / static_cast<double>(reached);
    s.mean_e_r = er / static_cast<double>(reached);
  }
  return s;
}

namespace metrics_detail {
inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}
inline std::string opt(const std::optional<double>& v, const char* f) {
  return v ? fmt(f, *v) : "-";
}
}  // namespace metrics_detail

/// Aligned text: one row per trial and a summary row.
inline std::string format_table(std::span<const TrialResult> results, const Summary& s) {
  using metrics_detail::fmt;
  using metrics_detail::opt;
  std::ostringstream o;
  char line[256];
  std::snprintf(line, sizeof line, "%-7s %-8s %10s %10s %10s %10s  %s\n", "trial", "success",
                "time_s", "e_p_m", "e_R_rad", "collisions", "abort");
  o << line;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    std::snprintf(line, sizeof line, "%-7zu %-8s %10s %10s %10s %10d  %s\n", i,
                  r.success ? "yes" : "no", fmt("%.2f", r.completion_time).c_str(),
                  opt(r.e_p, "%.6f").c_str(), opt(r.e_r, "%.6f").c_str(), r.collisions,
                  r.abort_reason.value_or("-").c_str());
    o << line;
  }
  o << "\n";
  std::snprintf(line, sizeof line,
                "trials %zu  success %.1f%%  mean time %s s  mean e_p %s m  mean e_R %s rad  "
                "collision rate %.1f%%\n",
                s.trials, s.success_rate, opt(s.mean_time, "%.2f").c_str(),
                opt(s.mean_e_p, "%.6f").c_str(), opt(s.mean_e_r, "%.6f").c_str(),
                s.collision_rate);
  o << line;
  return o.str();
}

inline std::string format_csv(std::span<const TrialResult> results, const Summary& s) {
  std::ostringstream o;
  o << "trial,success,time_s,e_p_m,e_R_rad,collisions,abort_reason\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    o << i << ',' << (r.success ? 1 : 0) << ',' << metrics_detail::fmt("%.6f", r.completion_time)
      << ',' << (r.e_p ? metrics_detail::fmt("%.9g", *r.e_p) : "") << ','
      << (r.e_r ? metrics_detail::fmt("%.9g", *r.e_r) : "") << ',' << r.collisions << ','
      << r.abort_reason.value_or("") << '\n';
  }
  o << "summary," << metrics_detail::fmt("%.2f", s.success_rate) << ','
    << (s.mean_time ? metrics_detail::fmt("%.6f", *s.mean_time) : "") << ','
    << (s.mean_e_p ? metrics_detail::fmt("%.9g", *s.mean_e_p) : "") << ','
    << (s.mean_e_r ? metrics_detail::fmt("%.9g", *s.mean_e_r) : "") << ','
    << metrics_detail::fmt("%.2f", s.collision_rate) << ",\n";
  return o.str();
}

}  // namespace teleop
