#pragma once

// Wire messages between the control service and leader devices, scripted
// drivers and consoles. A TCP frame is a 4-byte big-endian body length
// followed by a UTF-8 JSON object with a "type" field; websocket text frames
// carry the same JSON bodies without the prefix.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "teleop/error.hpp"
#include "teleop/geometry.hpp"

namespace teleop::proto {

using nlohmann::json;

inline constexpr std::size_t kMaxFrame = 1u << 20;

struct Pose {
  std::vector<double> p;  // 3
  std::vector<double> q;  // w, x, y, z with w >= 0

  static Pose from(const RigidTransform& t) {
    const UnitQuaternion u = UnitQuaternion::from_rotation(t.rotation);
    return {{t.translation.x(), t.translation.y(), t.translation.z()}, {u.w, u.x, u.y, u.z}};
  }
  RigidTransform to_transform() const {
    return {UnitQuaternion{q[0], q[1], q[2], q[3]}.to_rotation(), Vec3(p[0], p[1], p[2])};
  }
  bool operator==(const Pose&) const = default;
};

struct LeaderJointState {
  double t = 0.0;
  std::vector<double> q;
  double trigger = 0.0;
  bool confirm = false;
  bool abort = false;
  bool operator==(const LeaderJointState&) const = default;
};

struct FollowerJointState {
  double t = 0.0;
  std::vector<double> q;
  std::vector<double> qd;
  bool operator==(const FollowerJointState&) const = default;
};

struct TorqueFeedback {
  double t = 0.0;
  std::vector<double> grav, fric, joint, trig, total;
  bool operator==(const TorqueFeedback&) const = default;
};

struct GripperCommand {
  double t = 0.0;
  bool close = false;
  bool operator==(const GripperCommand&) const = default;
};

struct StageEvent {
  double t = 0.0;
  std::string mode;  // a stage mode name, or "abort-safe"
  bool operator==(const StageEvent&) const = default;
};

struct ObjectPose {
  int id = 0;
  Pose pose;
  bool operator==(const ObjectPose&) const = default;
};

struct WorldSnapshot {
  double t = 0.0;
  std::string mode;
  std::vector<double> q;
  Pose ee;
  std::vector<ObjectPose> objects;
  std::string gripper;
  std::optional<int> attached;
  std::optional<double> e_p;  // against the current grasp target
  std::optional<double> e_R;
  int collisions = 0;
  std::vector<std::vector<double>> link_points;  // link origins then the tool point
  bool operator==(const WorldSnapshot&) const = default;
};

struct Heartbeat {
  double t = 0.0;
  bool operator==(const Heartbeat&) const = default;
};

struct ErrorMessage {
  double t = 0.0;
  std::string code;
  std::string text;
  bool operator==(const ErrorMessage&) const = default;
};

/// First message from a client: the role it asks for.
struct Hello {
  double t = 0.0;
  std::string role;  // "operator" or "observer"
  bool operator==(const Hello&) const = default;
};

/// Server reply to Hello with the granted role and the chain metadata.
struct Welcome {
  double t = 0.0;
  std::string role;
  std::size_t dof = 0;
  std::vector<double> lower, upper;
  double dt = 0.0;
  bool operator==(const Welcome&) const = default;
};

using Message = std::variant<LeaderJointState, FollowerJointState, TorqueFeedback, GripperCommand,
                             StageEvent, WorldSnapshot, Heartbeat, ErrorMessage, Hello, Welcome>;

inline std::string_view type_name(const Message& m) {
  static constexpr std::string_view names[] = {
      "LeaderJointState", "FollowerJointState", "TorqueFeedback", "GripperCommand", "StageEvent",
      "WorldSnapshot",    "Heartbeat",          "Error",          "Hello",          "Welcome"};
  return names[m.index()];
}

inline double timestamp(const Message& m) {
  return std::visit([](const auto& x) { return x.t; }, m);
}

// ---------------------------------------------------------------------------
// JSON bodies

namespace detail {

[[noreturn]] inline void malformed(const std::string& what) {
  throw Error(ErrorCode::MalformedFrame, what);
}

inline std::vector<double> numbers(const json& j, const char* key, std::optional<std::size_t> n) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_array()) malformed(std::string("field '") + key + "' must be an array");
  std::vector<double> v;
  for (const auto& x : *it) {
    if (!x.is_number()) malformed(std::string("field '") + key + "' must hold numbers");
    v.push_back(x.get<double>());
  }
  if (n && v.size() != *n) {
    malformed(std::string("field '") + key + "' has " + std::to_string(v.size()) +
              " entries, expected " + std::to_string(*n));
  }
  return v;
}

inline double number(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_number()) malformed(std::string("field '") + key + "' must be a number");
  return it->get<double>();
}

inline std::string text(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_string()) malformed(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

inline bool flag(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) return false;
  if (!it->is_boolean()) malformed(std::string("field '") + key + "' must be a boolean");
  return it->get<bool>();
}

inline json pose(const Pose& p) { return {{"p", p.p}, {"q", p.q}}; }

inline Pose pose(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_object()) malformed(std::string("field '") + key + "' must be a pose");
  return {numbers(*it, "p", 3), numbers(*it, "q", 4)};
}

}  // namespace detail

inline json to_json(const Message& m) {
  using namespace detail;
  json j = std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, LeaderJointState>) {
          json o = {{"q", x.q}, {"trigger", x.trigger}};
          if (x.confirm) o["confirm"] = true;
          if (x.abort) o["abort"] = true;
          return o;
        } else if constexpr (std::is_same_v<T, FollowerJointState>) {
          return {{"q", x.q}, {"qd", x.qd}};
        } else if constexpr (std::is_same_v<T, TorqueFeedback>) {
          return {{"grav", x.grav}, {"fric", x.fric}, {"joint", x.joint}, {"trig", x.trig},
                  {"total", x.total}};
        } else if constexpr (std::is_same_v<T, GripperCommand>) {
          return {{"command", x.close ? "close" : "open"}};
        } else if constexpr (std::is_same_v<T, StageEvent>) {
          return {{"mode", x.mode}};
        } else if constexpr (std::is_same_v<T, WorldSnapshot>) {
          json objs = json::array();
          for (const auto& o : x.objects) objs.push_back({{"id", o.id}, {"pose", pose(o.pose)}});
          json o = {{"mode", x.mode},       {"q", x.q},
                    {"ee", pose(x.ee)},     {"objects", objs},
                    {"gripper", x.gripper}, {"collisions", x.collisions},
                    {"links", x.link_points}};
          o["attached"] = x.attached ? json(*x.attached) : json(nullptr);
          o["e_p"] = x.e_p ? json(*x.e_p) : json(nullptr);
          o["e_R"] = x.e_R ? json(*x.e_R) : json(nullptr);
          return o;
        } else if constexpr (std::is_same_v<T, Heartbeat>) {
          return json::object();
        } else if constexpr (std::is_same_v<T, ErrorMessage>) {
          return {{"code", x.code}, {"text", x.text}};
        } else if constexpr (std::is_same_v<T, Hello>) {
          return {{"role", x.role}};
        } else {
          return {{"role", x.role}, {"dof", x.dof}, {"lower", x.lower},
                  {"upper", x.upper}, {"dt", x.dt}};
        }
      },
      m);
  j["type"] = std::string(type_name(m));
  j["t"] = timestamp(m);
  return j;
}

/// `dof`, when known, is the negotiated joint count every joint array must
/// match. An unknown type decodes to an Error message rather than throwing.
inline Message from_json(const json& j, std::optional<std::size_t> dof = std::nullopt) {
  using namespace detail;
  if (!j.is_object()) malformed("message body must be a JSON object");
  const std::string type = text(j, "type");
  const double t = number(j, "t");
  if (type == "LeaderJointState") {
    return LeaderJointState{t, numbers(j, "q", dof), number(j, "trigger"), flag(j, "confirm"),
                            flag(j, "abort")};
  }
  if (type == "FollowerJointState") {
    auto q = numbers(j, "q", dof);
    return FollowerJointState{t, q, numbers(j, "qd", q.size())};
  }
  if (type == "TorqueFeedback") {
    auto grav = numbers(j, "grav", std::nullopt);
    const std::size_t n = grav.size();
    return TorqueFeedback{t, grav, numbers(j, "fric", n), numbers(j, "joint", n),
                          numbers(j, "trig", n), numbers(j, "total", n)};
  }
  if (type == "GripperCommand") {
    const std::string c = text(j, "command");
    if (c != "open" && c != "close") malformed("GripperCommand.command must be open or close");
    return GripperCommand{t, c == "close"};
  }
  if (type == "StageEvent") return StageEvent{t, text(j, "mode")};
  if (type == "WorldSnapshot") {
    WorldSnapshot s;
    s.t = t;
    s.mode = text(j, "mode");
    s.q = numbers(j, "q", dof);
    s.ee = pose(j, "ee");
    const auto objs = j.find("objects");
    if (objs == j.end() || !objs->is_array()) malformed("field 'objects' must be an array");
    for (const auto& o : *objs) {
      if (!o.is_object() || !o.contains("id") || !o["id"].is_number_integer()) {
        malformed("object entries need an integer id");
      }
      s.objects.push_back({o["id"].get<int>(), pose(o, "pose")});
    }
    s.gripper = text(j, "gripper");
    s.collisions = static_cast<int>(number(j, "collisions"));
    if (j.contains("attached") && !j["attached"].is_null()) s.attached = j["attached"].get<int>();
    if (j.contains("e_p") && !j["e_p"].is_null()) s.e_p = number(j, "e_p");
    if (j.contains("e_R") && !j["e_R"].is_null()) s.e_R = number(j, "e_R");
    const auto links = j.find("links");
    if (links != j.end()) {
      if (!links->is_array()) malformed("field 'links' must be an array");
      for (const auto& l : *links) s.link_points.push_back(numbers(json{{"p", l}}, "p", 3));
    }
    return s;
  }
  if (type == "Heartbeat") return Heartbeat{t};
  if (type == "Error") return ErrorMessage{t, text(j, "code"), text(j, "text")};
  if (type == "Hello") {
    const std::string role = text(j, "role");
    if (role != "operator" && role != "observer") malformed("Hello.role must be operator or observer");
    return Hello{t, role};
  }
  if (type == "Welcome") {
    Welcome w;
    w.t = t;
    w.role = text(j, "role");
    w.dof = static_cast<std::size_t>(number(j, "dof"));
    w.lower = numbers(j, "lower", w.dof);
    w.upper = numbers(j, "upper", w.dof);
    w.dt = number(j, "dt");
    return w;
  }
  return ErrorMessage{t, "UnknownType", "unknown message type '" + type + "'"};
}

inline std::string encode_body(const Message& m) { return to_json(m).dump(); }

inline Message decode_body(std::string_view body, std::optional<std::size_t> dof = std::nullopt) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::MalformedFrame, std::string("invalid JSON: ") + e.what());
  }
  return from_json(j, dof);
}

inline std::string encode(const Message& m) {
  const std::string body = encode_body(m);
  if (body.size() > kMaxFrame) throw Error(ErrorCode::MalformedFrame, "message exceeds frame limit");
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string frame;
  frame.reserve(4 + body.size());
  frame.push_back(static_cast<char>((n >> 24) & 0xff));
  frame.push_back(static_cast<char>((n >> 16) & 0xff));
  frame.push_back(static_cast<char>((n >> 8) & 0xff));
  frame.push_back(static_cast<char>(n & 0xff));
  frame += body;
  return frame;
}

inline std::uint32_t read_length(std::string_view b) {
  return (static_cast<std::uint32_t>(static_cast<unsigned char>(b[0])) << 24) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[1])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(b[2])) << 8) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[3]));
}

/// Decodes exactly one frame; the length prefix must cover the rest.
inline Message decode(std::string_view frame, std::optional<std::size_t> dof = std::nullopt) {
  if (frame.size() < 4) throw Error(ErrorCode::MalformedFrame, "frame shorter than its prefix");
  const std::uint32_t n = read_length(frame);
  if (n > kMaxFrame) throw Error(ErrorCode::MalformedFrame, "frame length over limit");
  if (frame.size() - 4 < n) throw Error(ErrorCode::MalformedFrame, "frame truncated");
  if (frame.size() - 4 > n) throw Error(ErrorCode::MalformedFrame, "trailing bytes after frame");
  return decode_body(frame.substr(4), dof);
}

/// Splits a byte stream into frame bodies.
class FrameReader {
 public:
  void feed(std::string_view bytes) { buf_.append(bytes); }

  /// Next complete body, if any. Throws MalformedFrame on an oversized prefix.
  std::optional<std::string> next() {
    if (buf_.size() < 4) return std::nullopt;
    const std::uint32_t n = read_length(buf_);
    if (n > kMaxFrame) throw Error(ErrorCode::MalformedFrame, "frame length over limit");
    if (buf_.size() < 4 + static_cast<std::size_t>(n)) return std::nullopt;
    std::string body = buf_.substr(4, n);
    buf_.erase(0, 4 + static_cast<std::size_t>(n));
    return body;
  }

  std::size_t buffered() const { return buf_.size(); }

 private:
  std::string buf_;
};

}  // namespace teleop::proto
