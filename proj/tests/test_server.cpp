#include <gtest/gtest.h>

#include <thread>

#include "test_support.hpp"

using namespace teleop;
namespace p = teleop::proto;
using net::Client;

namespace {

constexpr const char* kHost = "127.0.0.1";

ServerConfig test_config() {
  ServerConfig c = server_config_for(teleop::testing::pickup());
  c.tcp_port = 0;
  c.ws_port = 0;
  c.heartbeat_interval = 0.1;
  c.heartbeat_timeout = 1.0;
  c.max_queue = 100000;
  return c;
}

template <class T>
bool is(const std::optional<p::Message>& m) {
  return m && std::holds_alternative<T>(*m);
}

auto welcome_as(const std::string& role) {
  return [role](const p::Message& m) {
    const auto* w = std::get_if<p::Welcome>(&m);
    return w && w->role == role;
  };
}

auto error_code(const p::Message& m) -> std::string {
  const auto* e = std::get_if<p::ErrorMessage>(&m);
  return e ? e->code : std::string();
}

bool is_error(const p::Message& m) { return std::holds_alternative<p::ErrorMessage>(m); }

std::vector<double> vec(const JointVector& q) { return {q.data(), q.data() + q.size()}; }

/// Ticks the controller on network input and publishes each tick.
struct Loop {
  Controller& ctl;
  NetworkInput& input;
  Publisher& publish;

  TickRecord step() {
    const TickRecord rec = ctl.tick(input.next(ctl.world().time));
    publish(ctl, rec);
    return rec;
  }

  /// Streams the follower's own pose until the controller follows the leader.
  bool sync(Client& op) {
    for (int k = 0; k < 500; ++k) {
      op.send(p::LeaderJointState{0.0, vec(ctl.world().q), 0.0});
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
      const TickRecord rec = step();
      if (rec.input.present && ctl.synced()) return true;
    }
    return false;
  }

  /// Streams a straight leader ramp to `target`, one state per tick.
  void ramp(Client& op, const JointVector& from, const JointVector& target, int ticks) {
    for (int k = 1; k <= ticks; ++k) {
      op.send(p::LeaderJointState{0.0, vec(from + (target - from) * (double(k) / ticks)), 0.0});
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
      step();
    }
  }
};

class Server : public ::testing::Test {
 protected:
  void SetUp() override { server.start(); }
  void TearDown() override { server.stop(); }

  Client operator_tcp() {
    Client c = Client::tcp(kHost, server.tcp_port());
    c.send(p::Hello{0.0, "operator"});
    EXPECT_TRUE(c.receive_until(welcome_as("operator")));
    return c;
  }

  ProtocolServer server{test_config()};
};

}  // namespace

TEST_F(Server, ConnectStormGrantsOneOperator) {
  constexpr int kClients = 20;
  std::vector<std::string> outcome(kClients);
  std::vector<Client> clients;
  clients.reserve(kClients);
  for (int i = 0; i < kClients; ++i) {
    clients.push_back(i % 2 ? Client::websocket(kHost, server.ws_port())
                            : Client::tcp(kHost, server.tcp_port()));
  }
  std::vector<std::thread> threads;
  for (int i = 0; i < kClients; ++i) {
    threads.emplace_back([&, i] {
      clients[i].send(p::Hello{0.0, "operator"});
      const auto m = clients[i].receive_until(
          [](const p::Message& m) { return welcome_as("operator")(m) || is_error(m); }, 5.0);
      if (!m) return;
      outcome[i] = is_error(*m) ? error_code(*m) : "operator";
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(std::count(outcome.begin(), outcome.end(), "operator"), 1);
  EXPECT_EQ(std::count(outcome.begin(), outcome.end(), "RoleConflict"), kClients - 1);
  EXPECT_TRUE(server.operator_session());

  // Losers keep their connection.
  for (int i = 0; i < kClients; ++i) {
    if (outcome[i] != "RoleConflict") continue;
    clients[i].send(p::Hello{0.0, "observer"});
    EXPECT_TRUE(clients[i].receive_until(welcome_as("observer"))) << i;
  }
}

TEST_F(Server, SnapshotSentOnJoin) {
  Controller ctl(teleop::testing::pickup(), 1);
  const p::WorldSnapshot snap = make_snapshot(ctl, 0);
  server.set_snapshot(snap);
  Client c = Client::websocket(kHost, server.ws_port());
  const auto w = c.receive();
  ASSERT_TRUE(is<p::Welcome>(w));
  EXPECT_EQ(std::get<p::Welcome>(*w).role, "observer");
  EXPECT_EQ(std::get<p::Welcome>(*w).dof, 6u);
  const auto s = c.receive_until([](const p::Message& m) { return !std::holds_alternative<p::Heartbeat>(m); });
  ASSERT_TRUE(is<p::WorldSnapshot>(s));
  EXPECT_EQ(std::get<p::WorldSnapshot>(*s), snap);
  EXPECT_EQ(snap.link_points.size(), 7u);
}

TEST_F(Server, WebsocketJogDrivesFollower) {
  const Scenario& sc = teleop::testing::pickup();
  Controller ctl(sc, 3);
  NetworkInput input(server, sc.home);
  Publisher publish(server, 5);
  Client op = Client::websocket(kHost, server.ws_port());
  op.send(p::Hello{0.0, "operator"});
  ASSERT_TRUE(op.receive_until(welcome_as("operator")));

  Loop loop{ctl, input, publish};
  ASSERT_TRUE(loop.sync(op));
  JointVector target = sc.home;
  target(0) += 0.1;
  target(4) -= 0.05;
  loop.ramp(op, sc.home, target, 30);
  for (int k = 0; k < 1000 && (ctl.world().q - target).norm() > 0.0; ++k) loop.step();
  EXPECT_LE((ctl.world().q - target).lpNorm<Eigen::Infinity>(), 1e-12);

  // The follower stream ends at the jog target.
  std::optional<p::FollowerJointState> last;
  while (auto m = op.receive(0.3)) {
    if (const auto* f = std::get_if<p::FollowerJointState>(&*m)) last = *f;
  }
  ASSERT_TRUE(last);
  EXPECT_EQ(last->t, ctl.world().time);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(last->q[i], ctl.world().q(i));
}

TEST_F(Server, OperatorTimeoutHoldsFollower) {
  const Scenario& sc = teleop::testing::pickup();
  Controller ctl(sc, 4);
  NetworkInput input(server, sc.home);
  Publisher publish(server);
  Client observer = Client::tcp(kHost, server.tcp_port());
  Client op = operator_tcp();
  Loop loop{ctl, input, publish};
  ASSERT_TRUE(loop.sync(op));

  JointVector target = sc.home;
  target(0) += 1.5;  // about two seconds of motion at the joint limits
  loop.ramp(op, sc.home, target, 3);
  EXPECT_TRUE(ctl.active().active());
  // The operator goes silent from here on; the observer keeps beating.

  bool held = false;
  JointVector q_hold;
  const auto start = std::chrono::steady_clock::now();
  for (int k = 0; !held && std::chrono::steady_clock::now() - start < std::chrono::seconds(5); ++k) {
    if (loop.step().find_event("hold")) {
      held = true;
      q_hold = ctl.world().q;
    }
    if (k % 10 == 0) observer.send(p::Heartbeat{0.0});
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  ASSERT_TRUE(held);
  EXPECT_FALSE(server.operator_session());

  const auto ev = observer.receive_until(
      [](const p::Message& m) {
        const auto* s = std::get_if<p::StageEvent>(&m);
        return s && s->mode == "abort-safe" && s->t > 0.0;
      },
      3.0);
  EXPECT_TRUE(ev);

  // Held means the follower stops wherever the hold caught it, short of the target.
  for (int k = 0; k < 100; ++k) loop.step();
  EXPECT_LE((ctl.world().q - q_hold).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_GT((ctl.world().q - target).norm(), 1e-6);
}

TEST_F(Server, WrongWebsocketPathRefused) {
  try {
    Client::websocket(kHost, server.ws_port(), "/elsewhere");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoFailure);
    EXPECT_NE(std::string(e.what()).find("404"), std::string::npos) << e.what();
  }
}

TEST_F(Server, ObserverCannotDrive) {
  Client c = Client::websocket(kHost, server.ws_port());
  c.send(p::LeaderJointState{0.0, std::vector<double>(6, 0.0), 0.0});
  const auto m = c.receive_until(is_error);
  ASSERT_TRUE(m);
  EXPECT_EQ(error_code(*m), "RoleConflict");
  c.send(p::GripperCommand{0.0, true});
  EXPECT_EQ(error_code(*c.receive_until(is_error)), "RoleConflict");
  EXPECT_TRUE(server.drain().empty());
  c.send(p::Hello{0.0, "observer"});
  EXPECT_TRUE(c.receive_until(welcome_as("observer")));
}

TEST_F(Server, BadBodyKeepsConnection) {
  Client c = Client::tcp(kHost, server.tcp_port());
  const std::string body = "{\"type\":\"LeaderJointState\",";
  std::string frame(4, '\0');
  frame[3] = static_cast<char>(body.size());
  c.send_raw(frame + body);
  const auto m = c.receive_until(is_error);
  ASSERT_TRUE(m);
  EXPECT_EQ(error_code(*m), "MalformedFrame");

  c.send(p::Hello{0.0, "observer"});
  EXPECT_TRUE(c.receive_until(welcome_as("observer")));
  EXPECT_FALSE(c.closed());
}

TEST_F(Server, UnknownTypeAnswered) {
  Client c = Client::websocket(kHost, server.ws_port());
  c.send_raw_ws({true, ws::Opcode::Text, R"({"type":"Teleport","t":0})"});
  const auto m = c.receive_until(is_error);
  ASSERT_TRUE(m);
  EXPECT_EQ(error_code(*m), "UnknownType");
  c.send(p::Hello{0.0, "observer"});
  EXPECT_TRUE(c.receive_until(welcome_as("observer")));
}

TEST_F(Server, OversizedFrameClosesSession) {
  Client c = Client::tcp(kHost, server.tcp_port());
  c.send_raw(std::string("\x7f\xff\xff\xff", 4));
  const auto m = c.receive_until(is_error);
  ASSERT_TRUE(m);
  EXPECT_EQ(error_code(*m), "MalformedFrame");
  while (c.receive(1.0)) {
  }
  EXPECT_TRUE(c.closed());
}

TEST_F(Server, UnmaskedWebsocketFrameClosesSession) {
  Client c = Client::websocket(kHost, server.ws_port());
  c.send_raw(ws::encode_frame({true, ws::Opcode::Text, p::encode_body(p::Heartbeat{0.0})}));
  while (c.receive(1.0)) {
  }
  EXPECT_TRUE(c.closed());
}

TEST_F(Server, SilentSessionsAreDropped) {
  Client c = Client::tcp(kHost, server.tcp_port());
  ASSERT_TRUE(c.receive_until(welcome_as("observer")));
  const auto start = std::chrono::steady_clock::now();
  while (c.receive(0.5)) {
  }
  EXPECT_TRUE(c.closed());
  const double waited = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(waited, 3.0);
}

TEST_F(Server, SecondServerOnSamePortFails) {
  ServerConfig c = test_config();
  c.tcp_port = server.tcp_port();
  ProtocolServer other(c);
  try {
    other.start();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BindFailure);
  }
}
