#pragma once

// Chain-description and scenario files (YAML). Errors carry file:line:col.

#include <yaml-cpp/yaml.h>

#include <openssl/evp.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "teleop/dynamics.hpp"
#include "teleop/error.hpp"
#include "teleop/geometry.hpp"
#include "teleop/kinematics.hpp"
#include "teleop/perception.hpp"
#include "teleop/planner.hpp"
#include "teleop/simworld.hpp"

namespace teleop {

struct Scenario {
  std::string name;
  std::filesystem::path path;
  std::string hash;  // sha256 over the scenario and chain files

  SimParams sim;  // follower chain, camera, grasp tolerance, dt
  JointVector home;
  LeaderModel leader;
  std::vector<SimObject> objects;
  int target_id = 0;
  std::vector<CollisionShape> obstacles;

  DetectionPolicy detection;
  CartesianStep cartesian_step;
  IkOptions ik;

  double max_duration = 120.0;
  double lift_height = 0.05;
  double sync_tolerance = 0.05;
  double reconnect_tol_position = 1e-4;
  double reconnect_tol_orientation = 1e-4;

  const KinematicChain& follower() const { return sim.chain; }
  const SimObject& target() const {
    for (const auto& o : objects) {
      if (o.id == target_id) return o;
    }
    throw Error(ErrorCode::ConfigError, "scenario has no object with the target id");
  }
};

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

namespace config_detail {

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Typed accessors that report the offending node's position on failure.
class Reader {
 public:
  explicit Reader(std::string file) : file_(std::move(file)) {}

  [[noreturn]] void fail(const YAML::Node& at, const std::string& msg) const {
    const YAML::Mark m = at.Mark();
    std::string where = file_;
    if (!m.is_null()) where += ":" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1);
    throw Error(ErrorCode::ConfigError, where + ": " + msg);
  }

  YAML::Node child(const YAML::Node& parent, const std::string& key) const {
    if (!parent.IsMap()) fail(parent, "expected a mapping");
    const YAML::Node n = parent[key];
    if (!n) fail(parent, "missing key '" + key + "'");
    return n;
  }

  double number(const YAML::Node& n, const std::string& what) const {
    if (!n.IsScalar()) fail(n, what + ": expected a number");
    try {
      return n.as<double>();
    } catch (const YAML::Exception&) {
      fail(n, what + ": expected a number, got '" + n.Scalar() + "'");
    }
  }

  double number(const YAML::Node& parent, const std::string& key, double fallback) const {
    if (!parent.IsMap()) fail(parent, "expected a mapping");
    const YAML::Node n = parent[key];
    return n ? number(n, key) : fallback;
  }

  double required_number(const YAML::Node& parent, const std::string& key) const {
    return number(child(parent, key), key);
  }

  int integer(const YAML::Node& n, const std::string& what) const {
    if (!n.IsScalar()) fail(n, what + ": expected an integer");
    try {
      return n.as<int>();
    } catch (const YAML::Exception&) {
      fail(n, what + ": expected an integer, got '" + n.Scalar() + "'");
    }
  }

  bool boolean(const YAML::Node& parent, const std::string& key, bool fallback) const {
    const YAML::Node n = parent[key];
    if (!n) return fallback;
    try {
      return n.as<bool>();
    } catch (const YAML::Exception&) {
      fail(n, key + ": expected true or false");
    }
  }

  std::string string(const YAML::Node& parent, const std::string& key,
                     const std::string& fallback) const {
    const YAML::Node n = parent[key];
    if (!n) return fallback;
    if (!n.IsScalar()) fail(n, key + ": expected a string");
    return n.Scalar();
  }

  Eigen::VectorXd vector(const YAML::Node& n, const std::string& what,
                         std::optional<std::size_t> size = std::nullopt) const {
    if (!n.IsSequence()) fail(n, what + ": expected a list of numbers");
    if (size && n.size() != *size) {
      fail(n, what + ": expected " + std::to_string(*size) + " numbers, got " +
                  std::to_string(n.size()));
    }
    Eigen::VectorXd v(static_cast<Eigen::Index>(n.size()));
    for (std::size_t i = 0; i < n.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(n[i], what);
    return v;
  }

  Vec3 vec3(const YAML::Node& n, const std::string& what) const { return vector(n, what, 3); }

  /// {xyz: [..], rpy: [..]} or {xyz: [..], quat: [w, x, y, z]}; both optional.
  RigidTransform pose(const YAML::Node& n, const std::string& what) const {
    if (!n.IsMap()) fail(n, what + ": expected a pose mapping with xyz/rpy/quat");
    RigidTransform t;
    if (n["xyz"]) t.translation = vec3(n["xyz"], what + ".xyz");
    if (n["rpy"] && n["quat"]) fail(n, what + ": give either rpy or quat, not both");
    if (n["rpy"]) {
      const Vec3 rpy = vec3(n["rpy"], what + ".rpy");
      t.rotation = Rotation::rot_z(rpy.z()) * Rotation::rot_y(rpy.y()) * Rotation::rot_x(rpy.x());
    } else if (n["quat"]) {
      const Eigen::VectorXd q = vector(n["quat"], what + ".quat", 4);
      try {
        t.rotation = UnitQuaternion{q(0), q(1), q(2), q(3)}.to_rotation();
      } catch (const Error& e) {
        fail(n["quat"], what + ".quat: " + e.what());
      }
    }
    return t;
  }

  Eigen::VectorXd per_joint(const YAML::Node& parent, const std::string& key, std::size_t n,
                            double fallback) const {
    const YAML::Node v = parent[key];
    if (!v) return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), fallback);
    if (v.IsScalar()) return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), number(v, key));
    return vector(v, key, n);
  }

  const std::string& file() const { return file_; }

 private:
  std::string file_;
};

inline YAML::Node parse_yaml(const std::string& text, const std::string& file) {
  try {
    return YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw Error(ErrorCode::ConfigError, file + ":" + std::to_string(e.mark.line + 1) + ":" +
                                            std::to_string(e.mark.column + 1) + ": " + e.msg);
  }
}

inline Mat3 inertia_tensor(const Reader& r, const YAML::Node& n) {
  if (!n.IsMap()) r.fail(n, "tensor: expected {ixx, iyy, izz, ixy, ixz, iyz}");
  const double ixx = r.number(n, "ixx", 0.0), iyy = r.number(n, "iyy", 0.0),
               izz = r.number(n, "izz", 0.0), ixy = r.number(n, "ixy", 0.0),
               ixz = r.number(n, "ixz", 0.0), iyz = r.number(n, "iyz", 0.0);
  Mat3 m;
  m << ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz;
  return m;
}

}  // namespace config_detail

/// Parse a chain description from YAML text.
inline KinematicChain parse_chain(const std::string& text, const std::string& file) {
  using config_detail::Reader;
  const Reader r(file);
  const YAML::Node root = config_detail::parse_yaml(text, file);
  const YAML::Node joints = r.child(root, "joints");
  if (!joints.IsSequence() || joints.size() == 0) r.fail(joints, "joints: expected a non-empty list");
  std::vector<Joint> out;
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const YAML::Node jn = joints[i];
    Joint j;
    j.name = r.string(jn, "name", "joint" + std::to_string(i + 1));
    const std::string w = "joint '" + j.name + "'";
    if (jn["origin"]) j.offset = r.pose(jn["origin"], w + ".origin");
    j.axis = r.vec3(r.child(jn, "axis"), w + ".axis");
    if (std::abs(j.axis.norm() - 1.0) > 1e-6) r.fail(jn["axis"], w + ".axis: must be a unit vector");
    const YAML::Node lim = r.child(jn, "limits");
    j.q_min = r.required_number(lim, "lower");
    j.q_max = r.required_number(lim, "upper");
    if (!(j.q_min < j.q_max)) r.fail(lim, w + ": lower limit must be below upper limit");
    j.v_max = r.required_number(lim, "velocity");
    j.a_max = r.required_number(lim, "acceleration");
    if (!(j.v_max > 0.0) || !(j.a_max > 0.0)) r.fail(lim, w + ": velocity/acceleration must be > 0");
    j.link_radius = r.number(jn, "radius", 0.0);
    if (const YAML::Node in = jn["inertia"]) {
      j.link.mass = r.required_number(in, "mass");
      if (in["com"]) j.link.com = r.vec3(in["com"], w + ".inertia.com");
      if (in["tensor"]) j.link.inertia = config_detail::inertia_tensor(r, in["tensor"]);
      try {
        j.link.validate(w);
      } catch (const Error& e) {
        r.fail(in, e.what());
      }
    }
    out.push_back(std::move(j));
  }
  RigidTransform tool;
  if (root["tool"]) tool = r.pose(root["tool"], "tool");
  return KinematicChain(std::move(out), tool, r.string(root, "name", ""));
}

inline KinematicChain load_chain(const std::filesystem::path& path) {
  return parse_chain(config_detail::read_file(path), path.string());
}

/// Parse a scenario; chain files are resolved relative to `base_dir`.
inline Scenario parse_scenario(const std::string& text, const std::string& file,
                               const std::filesystem::path& base_dir) {
  using config_detail::Reader;
  const Reader r(file);
  const YAML::Node root = config_detail::parse_yaml(text, file);
  if (!root.IsMap()) r.fail(root, "scenario must be a mapping");
  Scenario sc;
  sc.name = r.string(root, "name", "scenario");
  std::string hashed = text;

  const auto chain_at = [&](const YAML::Node& n, const std::string& what) {
    if (!n.IsScalar()) r.fail(n, what + ": expected a file name");
    const std::filesystem::path p = base_dir / n.Scalar();
    std::string chain_text;
    try {
      chain_text = config_detail::read_file(p);
    } catch (const Error&) {
      r.fail(n, what + ": cannot open chain file '" + p.string() + "'");
    }
    hashed += chain_text;
    return parse_chain(chain_text, p.string());
  };

  // Follower
  const YAML::Node fol = r.child(root, "follower");
  sc.sim.chain = chain_at(r.child(fol, "chain"), "follower.chain");
  const std::size_t n = sc.sim.chain.dof();
  sc.home = fol["home"] ? r.vector(fol["home"], "follower.home", n)
                        : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  if (!sc.sim.chain.within_limits(sc.home)) r.fail(fol["home"] ? fol["home"] : fol, "follower.home: outside joint limits");
  sc.sim.dt = r.number(root, "dt", 0.01);
  if (!(sc.sim.dt > 0.0)) r.fail(root["dt"], "dt must be > 0");
  sc.max_duration = r.number(root, "max_duration", 120.0);

  // Leader
  const YAML::Node lead = r.child(root, "leader");
  sc.leader.chain = chain_at(r.child(lead, "chain"), "leader.chain");
  if (sc.leader.chain.dof() != n) {
    r.fail(lead["chain"], "leader.chain: has " + std::to_string(sc.leader.chain.dof()) +
                              " joints but the follower has " + std::to_string(n) +
                              "; the joint mapping is one-to-one");
  }
  if (const YAML::Node f = lead["friction"]) {
    sc.leader.friction.k_static = r.per_joint(f, "static", n, 0.0);
    sc.leader.friction.k_viscous = r.per_joint(f, "viscous", n, 0.0);
    sc.leader.friction.velocity_threshold = r.per_joint(f, "threshold", n, 1e-3);
    try {
      sc.leader.friction.validate(n);
    } catch (const Error& e) {
      r.fail(f, std::string("leader.friction: ") + e.what());
    }
  } else {
    sc.leader.friction = FrictionParams::zeros(n);
  }
  sc.leader.gains = CompensationGains::defaults(n);
  if (const YAML::Node g = lead["gains"]) {
    sc.leader.gains.kp = r.per_joint(g, "kp", n, 10.0);
    sc.leader.gains.kd = r.per_joint(g, "kd", n, 1.0);
    sc.leader.gains.ki = r.per_joint(g, "ki", n, 0.5);
    sc.leader.gains.error_threshold = r.number(g, "error_threshold", 0.05);
    sc.leader.gains.limit_margin = r.number(g, "limit_margin", 0.15);
    sc.leader.gains.integral_clamp = r.number(g, "integral_clamp", 0.5);
    try {
      sc.leader.gains.validate(n);
    } catch (const Error& e) {
      r.fail(g, std::string("leader.gains: ") + e.what());
    }
  }
  if (const YAML::Node t = lead["trigger"]) {
    sc.leader.trigger.spring = r.number(t, "spring", 0.2);
    sc.leader.trigger.contact_feedback = r.number(t, "contact_feedback", 0.1);
    sc.leader.trigger.max_angle = r.number(t, "max_angle", 0.5);
  }
  if (lead["gravity"]) sc.leader.gravity = r.vec3(lead["gravity"], "leader.gravity");
  sc.leader.full_inverse_dynamics = r.boolean(lead, "full_inverse_dynamics", false);

  // Camera
  const YAML::Node cam = r.child(root, "camera");
  sc.sim.camera.extrinsics = r.pose(r.child(cam, "extrinsics"), "camera.extrinsics");
  sc.sim.camera.range = r.number(cam, "range", 1.5);
  sc.sim.camera.half_fov = r.number(cam, "half_fov", 0.7);
  sc.sim.camera.sigma_position = r.number(cam, "sigma_position", 0.0);
  sc.sim.camera.sigma_orientation = r.number(cam, "sigma_orientation", 0.0);
  const auto& c = sc.sim.camera;
  if (!(c.range > 0.0)) r.fail(cam["range"], "camera.range: must be > 0");
  if (!(c.half_fov > 0.0 && c.half_fov <= M_PI / 2.0)) {
    r.fail(cam["half_fov"], "camera.half_fov: must be in (0, pi/2]");
  }
  if (c.sigma_position < 0.0) r.fail(cam["sigma_position"], "camera.sigma_position: must be >= 0");
  if (c.sigma_orientation < 0.0) r.fail(cam["sigma_orientation"], "camera.sigma_orientation: must be >= 0");

  if (const YAML::Node d = root["detection"]) {
    sc.detection.consecutive = d["consecutive"] ? r.integer(d["consecutive"], "consecutive") : 1;
    sc.detection.consistency_position = r.number(d, "consistency_position", 0.005);
    sc.detection.consistency_orientation = r.number(d, "consistency_orientation", 0.02);
    sc.detection.estimate_window =
        d["estimate_window"] ? r.integer(d["estimate_window"], "estimate_window") : 10;
    if (sc.detection.consecutive < 1 || sc.detection.estimate_window < 1) {
      r.fail(d, "detection: consecutive and estimate_window must be >= 1");
    }
  }

  // Objects
  const YAML::Node objs = r.child(root, "objects");
  if (!objs.IsSequence() || objs.size() == 0) r.fail(objs, "objects: expected a non-empty list");
  for (std::size_t i = 0; i < objs.size(); ++i) {
    const YAML::Node on = objs[i];
    SimObject o;
    o.id = r.integer(r.child(on, "id"), "objects.id");
    o.name = r.string(on, "name", "object" + std::to_string(o.id));
    o.pose = r.pose(r.child(on, "pose"), o.name + ".pose");
    if (on["tag_offset"]) o.tag_offset = r.pose(on["tag_offset"], o.name + ".tag_offset");
    if (on["grasp_offset"]) o.grasp_offset = r.pose(on["grasp_offset"], o.name + ".grasp_offset");
    o.graspable = r.boolean(on, "graspable", true);
    for (const auto& other : sc.objects) {
      if (other.id == o.id) r.fail(on, "duplicate object id " + std::to_string(o.id));
    }
    sc.objects.push_back(std::move(o));
  }
  sc.target_id = root["target"] ? r.integer(root["target"], "target") : sc.objects.front().id;
  bool found = false;
  for (const auto& o : sc.objects) found = found || o.id == sc.target_id;
  if (!found) r.fail(root["target"], "target: no object with id " + std::to_string(sc.target_id));

  // Obstacles
  if (const YAML::Node obs = root["obstacles"]) {
    if (!obs.IsSequence()) r.fail(obs, "obstacles: expected a list");
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const YAML::Node on = obs[i];
      const std::string kind = r.string(on, "kind", "");
      const std::string name = r.string(on, "name", "obstacle" + std::to_string(i));
      CollisionShape s;
      if (kind == "sphere") {
        s = CollisionShape::sphere(r.vec3(r.child(on, "center"), name + ".center"),
                                   r.required_number(on, "radius"), name);
      } else if (kind == "box") {
        s = CollisionShape::box(r.vec3(r.child(on, "center"), name + ".center"),
                                r.vec3(r.child(on, "half_extents"), name + ".half_extents"), name);
      } else if (kind == "capsule") {
        s = CollisionShape::capsule(r.pose(r.child(on, "pose"), name + ".pose"),
                                    r.required_number(on, "radius"),
                                    r.required_number(on, "half_length"), name);
      } else {
        r.fail(on, "obstacle kind must be sphere, box or capsule");
      }
      try {
        s.validate();
      } catch (const Error& e) {
        r.fail(on, name + ": " + e.what());
      }
      sc.obstacles.push_back(std::move(s));
    }
  }

  if (const YAML::Node g = root["gripper"]) {
    sc.sim.gripper_close_time = r.number(g, "close_time", 0.3);
    if (const YAML::Node tol = g["tolerance"]) {
      sc.sim.grasp_tolerance.position = r.number(tol, "position", 0.01);
      sc.sim.grasp_tolerance.orientation = r.number(tol, "orientation", 0.1);
    }
  }
  if (const YAML::Node p = root["planner"]) {
    if (const YAML::Node c = p["cartesian_step"]) {
      sc.cartesian_step.position = r.number(c, "position", 0.005);
      sc.cartesian_step.orientation = r.number(c, "orientation", 0.02);
    }
  }
  if (const YAML::Node k = root["ik"]) {
    sc.ik.damping = r.number(k, "damping", 1e-2);
    sc.ik.max_step = r.number(k, "max_step", 0.2);
    sc.ik.max_iterations = k["max_iterations"] ? r.integer(k["max_iterations"], "max_iterations") : 200;
    sc.ik.tol_position = r.number(k, "tol_position", 1e-4);
    sc.ik.tol_orientation = r.number(k, "tol_orientation", 1e-4);
  }
  if (const YAML::Node m = root["metrics"]) sc.lift_height = r.number(m, "lift_height", 0.05);
  if (const YAML::Node rc = root["reconnect"]) {
    sc.sync_tolerance = r.number(rc, "sync_tolerance", 0.05);
    sc.reconnect_tol_position = r.number(rc, "tol_position", 1e-4);
    sc.reconnect_tol_orientation = r.number(rc, "tol_orientation", 1e-4);
  }

  sc.hash = sha256_hex(hashed);
  return sc;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::IoFailure, "scenario file not found: " + path.string());
  }
  Scenario sc = parse_scenario(config_detail::read_file(path), path.string(),
                               path.has_parent_path() ? path.parent_path() : ".");
  sc.path = std::filesystem::absolute(path);
  return sc;
}

}  // namespace teleop
