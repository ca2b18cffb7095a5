#pragma once

// Live control service front end: TCP (length-prefixed) and websocket (/ws)
// listeners, a session registry with a single operator role, heartbeats, and
// bounded per-session outbound queues.
//
// Every connection gets a reader and a writer thread. Inbound messages from
// all sessions land in one FIFO drained by the control loop; outbound
// messages are fanned out to every session queue. A session whose queue is
// full is disconnected instead of slowing the loop down.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "teleop/controller.hpp"
#include "teleop/kinematics.hpp"
#include "teleop/net.hpp"
#include "teleop/protocol.hpp"
#include "teleop/trial.hpp"
#include "teleop/websocket.hpp"

namespace teleop {

struct ServerConfig {
  std::string bind = "127.0.0.1";
  std::uint16_t tcp_port = 7450;  // 0 picks a free port
  std::uint16_t ws_port = 7451;
  std::string ws_path = "/ws";
  double heartbeat_interval = 1.0;  // s
  double heartbeat_timeout = 3.0;   // s without any inbound message
  std::size_t max_queue = 512;      // outbound messages per session
  std::size_t dof = 0;
  std::vector<double> lower, upper;
  double dt = 0.01;
};

/// What the control loop sees from the network.
struct Inbound {
  enum class Kind { Message, OperatorJoined, OperatorLost };
  Kind kind = Kind::Message;
  std::uint64_t session = 0;
  proto::Message message;
};

class ProtocolServer {
 public:
  explicit ProtocolServer(ServerConfig cfg) : cfg_(std::move(cfg)) {}
  ProtocolServer(const ProtocolServer&) = delete;
  ProtocolServer& operator=(const ProtocolServer&) = delete;
  ~ProtocolServer() { stop(); }

  /// Binds both listeners; throws BindFailure.
  void start() {
    tcp_listener_ = net::listen_tcp(cfg_.bind, cfg_.tcp_port);
    ws_listener_ = net::listen_tcp(cfg_.bind, cfg_.ws_port);
    tcp_port_ = net::local_port(tcp_listener_);
    ws_port_ = net::local_port(ws_listener_);
    running_ = true;
    threads_.emplace_back([this] { accept_loop(tcp_listener_, false); });
    threads_.emplace_back([this] { accept_loop(ws_listener_, true); });
    threads_.emplace_back([this] { housekeeping(); });
  }

  void stop() {
    if (!running_.exchange(false)) return;
    for (auto& t : threads_) t.join();
    threads_.clear();
    std::vector<std::shared_ptr<Session>> all;
    {
      std::lock_guard lk(reg_mu_);
      for (auto& [id, s] : sessions_) all.push_back(s);
      sessions_.clear();
      operator_.reset();
    }
    for (auto& s : all) {
      s->close();
      s->join();
    }
    tcp_listener_.close();
    ws_listener_.close();
  }

  std::uint16_t tcp_port() const { return tcp_port_; }
  std::uint16_t ws_port() const { return ws_port_; }

  std::vector<Inbound> drain() {
    std::lock_guard lk(in_mu_);
    std::vector<Inbound> out(inbound_.begin(), inbound_.end());
    inbound_.clear();
    return out;
  }

  /// Sends to every live session. Also advances the server clock used to
  /// stamp heartbeats and replies, keeping timestamps monotone per sender.
  void broadcast(const proto::Message& m) {
    note_time(proto::timestamp(m));
    const std::string tcp = proto::encode(m);
    const std::string wsf = ws::encode_frame({true, ws::Opcode::Text, proto::encode_body(m)});
    for (auto& s : live_sessions()) enqueue(*s, s->websocket ? wsf : tcp);
  }

  /// Latest world snapshot, sent to every session as it joins.
  void set_snapshot(const proto::WorldSnapshot& s) {
    note_time(s.t);
    std::lock_guard lk(snap_mu_);
    snapshot_ = s;
  }

  std::optional<std::uint64_t> operator_session() const {
    std::lock_guard lk(reg_mu_);
    return operator_;
  }

  std::size_t session_count() const {
    std::lock_guard lk(reg_mu_);
    return sessions_.size();
  }

  double clock() const { return now_t_.load(); }

 private:
  struct Session {
    std::uint64_t id = 0;
    bool websocket = false;
    net::Socket sock;
    std::string role = "observer";
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::string> out;
    bool closing = false;
    std::atomic<bool> reader_done{false};
    std::atomic<std::int64_t> last_rx_ms{0};
    std::thread reader, writer;

    void close() {
      {
        std::lock_guard lk(mu);
        closing = true;
      }
      cv.notify_all();
      sock.shutdown();
    }
    /// Sends what is queued, then closes.
    void finish() {
      {
        std::lock_guard lk(mu);
        closing = true;
      }
      cv.notify_all();
    }
    void join() {
      if (reader.joinable()) reader.join();
      if (writer.joinable()) writer.join();
    }
  };

  static std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  }

  void note_time(double t) {
    double cur = now_t_.load();
    while (t > cur && !now_t_.compare_exchange_weak(cur, t)) {
    }
  }

  std::vector<std::shared_ptr<Session>> live_sessions() {
    std::lock_guard lk(reg_mu_);
    std::vector<std::shared_ptr<Session>> v;
    for (auto& [id, s] : sessions_) {
      if (!s->reader_done) v.push_back(s);
    }
    return v;
  }

  void enqueue(Session& s, std::string bytes) {
    bool overflow = false;
    {
      std::lock_guard lk(s.mu);
      if (s.closing) return;
      if (s.out.size() >= cfg_.max_queue) {
        overflow = true;
      } else {
        s.out.push_back(std::move(bytes));
      }
    }
    if (overflow) {
      s.close();
    } else {
      s.cv.notify_one();
    }
  }

  void send_to(Session& s, const proto::Message& m) {
    enqueue(s, s.websocket ? ws::encode_frame({true, ws::Opcode::Text, proto::encode_body(m)})
                           : proto::encode(m));
  }

  void push_inbound(Inbound in) {
    std::lock_guard lk(in_mu_);
    inbound_.push_back(std::move(in));
  }

  proto::Welcome welcome(const std::string& role) const {
    return {clock(), role, cfg_.dof, cfg_.lower, cfg_.upper, cfg_.dt};
  }

  void accept_loop(const net::Socket& listener, bool websocket) {
    while (running_) {
      if (!listener.wait_readable(100)) continue;
      const int fd = ::accept4(listener.fd(), nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) continue;
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      const timeval send_timeout{2, 0};  // a stalled peer cannot wedge its writer
      ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &send_timeout, sizeof send_timeout);
      auto s = std::make_shared<Session>();
      s->sock = net::Socket(fd);
      s->websocket = websocket;
      s->last_rx_ms = now_ms();
      {
        std::lock_guard lk(reg_mu_);
        s->id = next_id_++;
        sessions_[s->id] = s;
      }
      s->writer = std::thread([this, s] { writer_loop(*s); });
      s->reader = std::thread([this, s] { reader_loop(*s); });
    }
  }

  void writer_loop(Session& s) {
    for (;;) {
      std::string bytes;
      {
        std::unique_lock lk(s.mu);
        s.cv.wait(lk, [&] { return s.closing || !s.out.empty(); });
        if (s.out.empty()) {
          s.sock.shutdown();
          return;
        }
        bytes = std::move(s.out.front());
        s.out.pop_front();
      }
      if (!s.sock.send_all(bytes)) {
        s.close();
        return;
      }
    }
  }

  void joined(Session& s) {
    send_to(s, welcome(s.role));
    std::optional<proto::WorldSnapshot> snap;
    {
      std::lock_guard lk(snap_mu_);
      snap = snapshot_;
    }
    if (snap) send_to(s, *snap);
  }

  void reader_loop(Session& s) {
    char buf[65536];
    proto::FrameReader frames;
    ws::FrameParser wsframes(true);
    bool upgraded = !s.websocket;
    std::string head;
    if (upgraded) joined(s);
    for (;;) {
      const ssize_t n = s.sock.recv_some(buf, sizeof buf);
      if (n <= 0) break;
      s.last_rx_ms = now_ms();
      try {
        if (!upgraded) {
          head.append(buf, static_cast<std::size_t>(n));
          const auto end = head.find("\r\n\r\n");
          if (end == std::string::npos) {
            if (head.size() > 16384) break;
            continue;
          }
          std::string reply;
          const auto ok = ws::handshake_response(ws::parse_request(head.substr(0, end + 2)),
                                                 cfg_.ws_path, reply);
          enqueue(s, ok ? *ok : reply);
          if (!ok) {
            s.finish();
            break;
          }
          upgraded = true;
          joined(s);
          wsframes.feed(std::string_view(head).substr(end + 4));
        } else if (s.websocket) {
          wsframes.feed({buf, static_cast<std::size_t>(n)});
        } else {
          frames.feed({buf, static_cast<std::size_t>(n)});
        }
        if (s.websocket) {
          while (auto f = wsframes.next()) {
            if (f->opcode == ws::Opcode::Close) {
              enqueue(s, ws::encode_frame({true, ws::Opcode::Close, f->payload.substr(0, 2)}));
              s.finish();
              break;
            }
            if (f->opcode == ws::Opcode::Ping) {
              enqueue(s, ws::encode_frame({true, ws::Opcode::Pong, f->payload}));
              continue;
            }
            if (f->opcode == ws::Opcode::Text || f->opcode == ws::Opcode::Binary) {
              handle_body(s, f->payload);
            }
          }
        } else {
          while (auto body = frames.next()) handle_body(s, *body);
        }
      } catch (const Error& e) {
        // The byte stream can no longer be split into frames.
        send_to(s, proto::ErrorMessage{clock(), std::string(to_string(e.code())), e.what()});
        s.finish();
        break;
      }
    }
    s.reader_done = true;
  }

  void handle_body(Session& s, const std::string& body) {
    proto::Message m;
    try {
      m = proto::decode_body(body, cfg_.dof ? std::optional(cfg_.dof) : std::nullopt);
    } catch (const Error& e) {
      send_to(s, proto::ErrorMessage{clock(), std::string(to_string(e.code())), e.what()});
      return;
    }
    if (auto* err = std::get_if<proto::ErrorMessage>(&m)) {
      if (err->code == "UnknownType") send_to(s, proto::ErrorMessage{clock(), err->code, err->text});
      return;
    }
    if (auto* hello = std::get_if<proto::Hello>(&m)) {
      if (hello->role == "operator" && s.role != "operator") {
        bool granted = false;
        {
          std::lock_guard lk(reg_mu_);
          if (!operator_) {
            operator_ = s.id;
            s.role = "operator";
            granted = true;
          }
        }
        if (!granted) {
          send_to(s, proto::ErrorMessage{clock(), std::string(to_string(ErrorCode::RoleConflict)),
                                         "another client holds the operator role"});
          return;
        }
        push_inbound({Inbound::Kind::OperatorJoined, s.id, m});
      }
      send_to(s, welcome(s.role));
      return;
    }
    if (std::holds_alternative<proto::Heartbeat>(m)) return;
    if (std::holds_alternative<proto::LeaderJointState>(m) ||
        std::holds_alternative<proto::GripperCommand>(m)) {
      if (s.role != "operator") {
        send_to(s, proto::ErrorMessage{clock(), std::string(to_string(ErrorCode::RoleConflict)),
                                       "only the operator may send leader input"});
        return;
      }
      push_inbound({Inbound::Kind::Message, s.id, m});
      return;
    }
    send_to(s, proto::ErrorMessage{clock(), "UnexpectedMessage",
                                   std::string(proto::type_name(m)) + " is server-to-client only"});
  }

  void housekeeping() {
    auto next_beat = std::chrono::steady_clock::now();
    const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(cfg_.heartbeat_interval));
    while (running_) {
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
      if (std::chrono::steady_clock::now() >= next_beat) {
        next_beat += interval;
        const proto::Heartbeat hb{clock()};
        const std::string tcp = proto::encode(hb);
        const std::string wsf = ws::encode_frame({true, ws::Opcode::Text, proto::encode_body(hb)});
        for (auto& s : live_sessions()) enqueue(*s, s->websocket ? wsf : tcp);
      }
      const auto timeout_ms = static_cast<std::int64_t>(cfg_.heartbeat_timeout * 1000.0);
      const std::int64_t now = now_ms();
      std::vector<std::shared_ptr<Session>> dead;
      {
        std::lock_guard lk(reg_mu_);
        for (auto it = sessions_.begin(); it != sessions_.end();) {
          Session& s = *it->second;
          if (!s.reader_done && now - s.last_rx_ms > timeout_ms) s.close();
          if (s.reader_done) {
            if (operator_ == s.id) {
              operator_.reset();
              push_inbound({Inbound::Kind::OperatorLost, s.id, proto::Heartbeat{clock()}});
            }
            dead.push_back(it->second);
            it = sessions_.erase(it);
          } else {
            ++it;
          }
        }
      }
      for (auto& s : dead) {
        s->finish();
        s->join();
      }
    }
  }

  ServerConfig cfg_;
  net::Socket tcp_listener_, ws_listener_;
  std::uint16_t tcp_port_ = 0, ws_port_ = 0;
  std::atomic<bool> running_{false};
  std::vector<std::thread> threads_;

  mutable std::mutex reg_mu_;
  std::map<std::uint64_t, std::shared_ptr<Session>> sessions_;
  std::optional<std::uint64_t> operator_;
  std::uint64_t next_id_ = 1;

  std::mutex in_mu_;
  std::deque<Inbound> inbound_;

  std::mutex snap_mu_;
  std::optional<proto::WorldSnapshot> snapshot_;

  std::atomic<double> now_t_{0.0};
};

/// Leader input from the network operator. The follower holds whenever no
/// operator is connected or none has streamed a state yet. Confirm and abort
/// flags are latched until the next tick consumes them.
class NetworkInput : public InputSource {
 public:
  NetworkInput(ProtocolServer& server, JointVector initial_q) : server_(server) {
    state_.q = std::move(initial_q);
    state_.present = false;
  }

  LeaderInput next(double) override {
    for (auto& in : server_.drain()) {
      switch (in.kind) {
        case Inbound::Kind::OperatorJoined:
          break;
        case Inbound::Kind::OperatorLost:
          state_.present = false;
          break;
        case Inbound::Kind::Message:
          if (const auto* l = std::get_if<proto::LeaderJointState>(&in.message)) {
            state_.q = Eigen::Map<const JointVector>(l->q.data(), static_cast<Eigen::Index>(l->q.size()));
            state_.trigger = l->trigger;
            state_.present = true;
            confirm_ = confirm_ || l->confirm;
            abort_ = abort_ || l->abort;
          } else if (const auto* g = std::get_if<proto::GripperCommand>(&in.message)) {
            state_.trigger = g->close ? 1.0 : 0.0;
          }
          break;
      }
    }
    LeaderInput out = state_;
    out.confirm = std::exchange(confirm_, false);
    out.abort = std::exchange(abort_, false);
    return out;
  }

  bool exhausted(double) const override { return false; }

 private:
  ProtocolServer& server_;
  LeaderInput state_;
  bool confirm_ = false;
  bool abort_ = false;
};

inline std::vector<double> to_std(const JointVector& v) { return {v.data(), v.data() + v.size()}; }

inline proto::WorldSnapshot make_snapshot(const Controller& ctl, int collisions) {
  const KinematicChain& chain = ctl.scenario().follower();
  const WorldState& w = ctl.world();
  proto::WorldSnapshot s;
  s.t = w.time;
  s.mode = std::string(to_string(ctl.stage().mode));
  s.q = to_std(w.q);
  const ChainFrames frames = forward_kinematics_frames(chain, w.q);
  s.ee = proto::Pose::from(frames.end_effector);
  for (const auto& l : frames.links) s.link_points.push_back(to_std(l.translation));
  s.link_points.push_back(to_std(frames.end_effector.translation));
  for (const auto& o : w.objects) s.objects.push_back({o.id, proto::Pose::from(o.pose)});
  s.gripper = std::string(to_string(w.gripper.mode));
  s.attached = w.gripper.attached;
  if (ctl.stage().grasp_pose) {
    s.e_p = position_error(*ctl.stage().grasp_pose, frames.end_effector);
    s.e_R = orientation_error(*ctl.stage().grasp_pose, frames.end_effector);
  }
  s.collisions = collisions;
  return s;
}

/// Publishes the per-tick stream for one controller: follower state and
/// torque every tick, stage events on change, snapshots at `snapshot_every`.
class Publisher {
 public:
  Publisher(ProtocolServer& server, int snapshot_every = 10)
      : server_(server), every_(std::max(1, snapshot_every)) {}

  void operator()(const Controller& ctl, const TickRecord& rec) {
    for (const auto& e : rec.events) {
      if (e.kind == "collision") ++collisions_;
      if (e.kind == "hold") server_.broadcast(proto::StageEvent{rec.t, "abort-safe"});
    }
    if (!last_mode_ || *last_mode_ != rec.mode) {
      server_.broadcast(proto::StageEvent{rec.t, std::string(to_string(rec.mode))});
      last_mode_ = rec.mode;
    }
    server_.broadcast(proto::FollowerJointState{rec.t, to_std(rec.q_follower), to_std(rec.qd_follower)});
    server_.broadcast(proto::TorqueFeedback{rec.t, to_std(rec.torque.grav), to_std(rec.torque.fric),
                                            to_std(rec.torque.joint), to_std(rec.torque.trig),
                                            to_std(rec.torque.total)});
    const proto::WorldSnapshot snap = make_snapshot(ctl, collisions_);
    server_.set_snapshot(snap);
    if (rec.tick % static_cast<std::uint64_t>(every_) == 0) server_.broadcast(snap);
  }

 private:
  ProtocolServer& server_;
  int every_;
  int collisions_ = 0;
  std::optional<Mode> last_mode_;
};

inline ServerConfig server_config_for(const Scenario& sc) {
  ServerConfig c;
  c.dof = sc.follower().dof();
  c.lower = to_std(sc.follower().lower_limits());
  c.upper = to_std(sc.follower().upper_limits());
  c.dt = sc.sim.dt;
  return c;
}

}  // namespace teleop
