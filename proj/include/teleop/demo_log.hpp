#pragma once

// Demonstration logs: one header line, one JSON record per control tick, an
// end marker and the recorded trial result, as newline-delimited JSON.
//
// Poses are stored as translation + row-major rotation matrix so that a log
// read back and written again is byte-identical.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "teleop/dynamics.hpp"
#include "teleop/error.hpp"
#include "teleop/geometry.hpp"
#include "teleop/perception.hpp"
#include "teleop/shared_control.hpp"
#include "teleop/simworld.hpp"

namespace teleop {

using nlohmann::json;

inline constexpr int kLogVersion = 1;

// ---------------------------------------------------------------------------
// JSON helpers

inline json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Eigen::VectorXd vec_from_json(const json& j, const char* what) {
  if (!j.is_array()) throw Error(ErrorCode::SchemaMismatch, std::string(what) + ": expected array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(ErrorCode::SchemaMismatch, std::string(what) + ": expected numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline json pose_to_json(const RigidTransform& t) {
  json r = json::array();
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) r.push_back(t.rotation.matrix()(i, k));
  }
  return {{"p", vec_to_json(t.translation)}, {"R", r}};
}

inline RigidTransform pose_from_json(const json& j) {
  const Eigen::VectorXd p = vec_from_json(j.at("p"), "pose.p");
  const Eigen::VectorXd r = vec_from_json(j.at("R"), "pose.R");
  if (p.size() != 3 || r.size() != 9) throw Error(ErrorCode::SchemaMismatch, "pose: wrong arity");
  Mat3 m;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) m(i, k) = r(3 * i + k);
  }
  // Stored matrices are already orthonormal; keep them bit-exact.
  RigidTransform t;
  t.translation = p;
  t.rotation = Rotation::from_matrix(m);
  if (t.rotation.matrix() != m) {
    throw Error(ErrorCode::SchemaMismatch, "pose: rotation drifted beyond tolerance");
  }
  return t;
}

// ---------------------------------------------------------------------------
// Records

/// What the leader (human, script, or network client) supplied for one tick.
/// The scripted-driver file uses the same fields.
struct LeaderInput {
  JointVector q;
  double trigger = 0.0;  // 0 released .. 1 fully pulled
  bool confirm = false;  // operator confirmation for the autonomous stage
  bool abort = false;
  bool present = true;   // false when no operator is connected

  bool operator==(const LeaderInput& o) const {
    return q == o.q && trigger == o.trigger && confirm == o.confirm && abort == o.abort &&
           present == o.present;
  }
};

struct LogEvent {
  std::string kind;
  json data = json::object();

  bool operator==(const LogEvent&) const = default;
};

struct TickRecord {
  std::uint64_t tick = 0;
  double t = 0.0;  // world time at the end of the tick
  LeaderInput input;
  bool new_command = false;     // input differs from the previous tick
  bool teleop_applied = false;  // a leader target reached the follower planner
  JointVector q_follower;
  JointVector qd_follower;
  GripperMode gripper = GripperMode::Open;
  std::optional<int> attached;
  Mode mode = Mode::TeleopCoarse;
  std::optional<TagDetection> detection;
  TorqueStack torque;
  std::optional<RigidTransform> target_pose;
  std::vector<LogEvent> events;

  const LogEvent* find_event(const std::string& kind) const {
    for (const auto& e : events) {
      if (e.kind == kind) return &e;
    }
    return nullptr;
  }
};

struct LogHeader {
  int version = kLogVersion;
  std::string scenario;
  std::string scenario_path;
  std::string scenario_hash;
  std::uint64_t seed = 0;
  double dt = 0.01;
  std::size_t dof = 0;
  std::string driver;
  JointVector home;
};

struct TrialResult {
  bool success = false;
  double completion_time = 0.0;
  std::optional<double> e_p;
  std::optional<double> e_r;
  int collisions = 0;
  std::optional<std::string> abort_reason;

  bool reached_grasp() const { return e_p.has_value(); }
  bool operator==(const TrialResult&) const = default;
};

struct DemoLog {
  LogHeader header;
  std::vector<TickRecord> records;
  std::optional<std::string> end_reason;
  std::optional<TrialResult> result;
};

// ---------------------------------------------------------------------------
// Serialization

inline json to_json(const LeaderInput& in) {
  json j = {{"q_L", vec_to_json(in.q)}, {"trigger", in.trigger}};
  if (in.confirm) j["confirm"] = true;
  if (in.abort) j["abort"] = true;
  if (!in.present) j["present"] = false;
  return j;
}

inline LeaderInput leader_input_from_json(const json& j) {
  LeaderInput in;
  in.q = vec_from_json(j.at("q_L"), "q_L");
  in.trigger = j.value("trigger", 0.0);
  in.confirm = j.value("confirm", false);
  in.abort = j.value("abort", false);
  in.present = j.value("present", true);
  return in;
}

inline json torque_to_json(const TorqueStack& s) {
  return {{"grav", vec_to_json(s.grav)},   {"fric", vec_to_json(s.fric)},
          {"joint", vec_to_json(s.joint)}, {"trig", vec_to_json(s.trig)},
          {"total", vec_to_json(s.total)}};
}

inline TorqueStack torque_from_json(const json& j) {
  return {vec_from_json(j.at("grav"), "grav"), vec_from_json(j.at("fric"), "fric"),
          vec_from_json(j.at("joint"), "joint"), vec_from_json(j.at("trig"), "trig"),
          vec_from_json(j.at("total"), "total")};
}

inline json to_json(const TickRecord& r) {
  json j = to_json(r.input);
  j["type"] = "tick";
  j["tick"] = r.tick;
  j["t"] = r.t;
  j["cmd"] = r.new_command;
  j["applied"] = r.teleop_applied;
  j["q_B"] = vec_to_json(r.q_follower);
  j["qd_B"] = vec_to_json(r.qd_follower);
  j["gripper"] = std::string(to_string(r.gripper));
  if (r.attached) j["attached"] = *r.attached;
  j["mode"] = std::string(to_string(r.mode));
  if (r.detection) {
    j["detection"] = {{"id", r.detection->tag_id},
                      {"t", r.detection->timestamp},
                      {"pose", pose_to_json(r.detection->pose)}};
  }
  j["torque"] = torque_to_json(r.torque);
  if (r.target_pose) j["target"] = pose_to_json(*r.target_pose);
  if (!r.events.empty()) {
    json ev = json::array();
    for (const auto& e : r.events) ev.push_back({{"kind", e.kind}, {"data", e.data}});
    j["events"] = ev;
  }
  return j;
}

inline GripperMode gripper_from_string(const std::string& s) {
  if (s == "open") return GripperMode::Open;
  if (s == "closing") return GripperMode::Closing;
  if (s == "closed") return GripperMode::Closed;
  throw Error(ErrorCode::SchemaMismatch, "unknown gripper state '" + s + "'");
}

inline TickRecord tick_from_json(const json& j) {
  TickRecord r;
  r.input = leader_input_from_json(j);
  r.tick = j.at("tick").get<std::uint64_t>();
  r.t = j.at("t").get<double>();
  r.new_command = j.at("cmd").get<bool>();
  r.teleop_applied = j.at("applied").get<bool>();
  r.q_follower = vec_from_json(j.at("q_B"), "q_B");
  r.qd_follower = vec_from_json(j.at("qd_B"), "qd_B");
  r.gripper = gripper_from_string(j.at("gripper").get<std::string>());
  if (j.contains("attached")) r.attached = j["attached"].get<int>();
  const auto mode = mode_from_string(j.at("mode").get<std::string>());
  if (!mode) throw Error(ErrorCode::SchemaMismatch, "unknown mode in record");
  r.mode = *mode;
  if (j.contains("detection")) {
    const json& d = j["detection"];
    r.detection = TagDetection{d.at("id").get<int>(), pose_from_json(d.at("pose")),
                               d.at("t").get<double>()};
  }
  r.torque = torque_from_json(j.at("torque"));
  if (j.contains("target")) r.target_pose = pose_from_json(j["target"]);
  if (j.contains("events")) {
    for (const auto& e : j["events"]) r.events.push_back({e.at("kind").get<std::string>(), e.at("data")});
  }
  return r;
}

inline json to_json(const LogHeader& h) {
  return {{"type", "header"},         {"version", h.version},
          {"scenario", h.scenario},   {"scenario_path", h.scenario_path},
          {"scenario_hash", h.scenario_hash}, {"seed", h.seed},
          {"dt", h.dt},               {"dof", h.dof},
          {"driver", h.driver},       {"home", vec_to_json(h.home)}};
}

inline LogHeader header_from_json(const json& j) {
  if (j.value("type", "") != "header") throw Error(ErrorCode::SchemaMismatch, "first line is not a header");
  LogHeader h;
  h.version = j.at("version").get<int>();
  if (h.version != kLogVersion) {
    throw Error(ErrorCode::SchemaMismatch, "log version " + std::to_string(h.version) +
                                               " (expected " + std::to_string(kLogVersion) + ")");
  }
  h.scenario = j.at("scenario").get<std::string>();
  h.scenario_path = j.value("scenario_path", "");
  h.scenario_hash = j.at("scenario_hash").get<std::string>();
  h.seed = j.at("seed").get<std::uint64_t>();
  h.dt = j.at("dt").get<double>();
  h.dof = j.at("dof").get<std::size_t>();
  h.driver = j.value("driver", "");
  h.home = vec_from_json(j.at("home"), "home");
  return h;
}

inline json to_json(const TrialResult& r) {
  json j = {{"type", "result"},
            {"success", r.success},
            {"time", r.completion_time},
            {"collisions", r.collisions}};
  j["e_p"] = r.e_p ? json(*r.e_p) : json(nullptr);
  j["e_R"] = r.e_r ? json(*r.e_r) : json(nullptr);
  j["abort_reason"] = r.abort_reason ? json(*r.abort_reason) : json(nullptr);
  return j;
}

inline TrialResult result_from_json(const json& j) {
  TrialResult r;
  r.success = j.at("success").get<bool>();
  r.completion_time = j.at("time").get<double>();
  r.collisions = j.at("collisions").get<int>();
  if (!j.at("e_p").is_null()) r.e_p = j["e_p"].get<double>();
  if (!j.at("e_R").is_null()) r.e_r = j["e_R"].get<double>();
  if (!j.at("abort_reason").is_null()) r.abort_reason = j["abort_reason"].get<std::string>();
  return r;
}

/// Streams a log to disk line by line so that an interrupted run still leaves
/// every completed tick behind.
class LogWriter {
 public:
  LogWriter(const std::filesystem::path& path, const LogHeader& header) : path_(path) {
    if (path.has_parent_path()) {
      std::error_code ec;
      std::filesystem::create_directories(path.parent_path(), ec);
    }
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw Error(ErrorCode::IoFailure, "cannot write log " + path.string());
    line(to_json(header));
  }

  void record(const TickRecord& r) { line(to_json(r)); }
  void end(const std::string& reason) { line({{"type", "end"}, {"reason", reason}}); }
  void result(const TrialResult& r) { line(to_json(r)); }
  void flush() { out_.flush(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  void line(const json& j) {
    out_ << j.dump() << '\n';
    if (!out_) throw Error(ErrorCode::IoFailure, "write failed for " + path_.string());
  }

  std::filesystem::path path_;
  std::ofstream out_;
};

inline void write_log(const std::filesystem::path& path, const DemoLog& log) {
  LogWriter w(path, log.header);
  for (const auto& r : log.records) w.record(r);
  if (log.end_reason) w.end(*log.end_reason);
  if (log.result) w.result(*log.result);
  w.flush();
}

inline DemoLog read_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open log " + path.string());
  DemoLog log;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  double last_t = -1.0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::SchemaMismatch, where + e.what());
    }
    try {
      if (!have_header) {
        log.header = header_from_json(j);
        have_header = true;
        continue;
      }
      const std::string type = j.value("type", "");
      if (type == "tick") {
        TickRecord r = tick_from_json(j);
        if (!(r.t > last_t)) throw Error(ErrorCode::SchemaMismatch, "timestamps must increase");
        last_t = r.t;
        log.records.push_back(std::move(r));
      } else if (type == "end") {
        log.end_reason = j.at("reason").get<std::string>();
      } else if (type == "result") {
        log.result = result_from_json(j);
      } else {
        throw Error(ErrorCode::SchemaMismatch, "unknown record type '" + type + "'");
      }
    } catch (const Error& e) {
      throw Error(e.code(), where + e.what());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::SchemaMismatch, where + e.what());
    }
  }
  if (!have_header) throw Error(ErrorCode::SchemaMismatch, path.string() + ": missing header");
  return log;
}

}  // namespace teleop
