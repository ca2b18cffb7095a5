// teleopctl: run scenarios, replay demonstration logs, serve the live
// control service.

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "teleop/teleop.hpp"

namespace fs = std::filesystem;
using namespace teleop;

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

void install_signals() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

int report(const std::string& code, const std::string& msg, int exit_code) {
  std::cerr << "error code=" << code << " msg=" << one_line(msg) << '\n';
  return exit_code;
}

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigError:
    case ErrorCode::IoFailure:
    case ErrorCode::InvalidArgument:
      return 2;
    case ErrorCode::BindFailure:
      return 3;
    default:
      return 1;
  }
}

int report(const Error& e) {
  return report(std::string(to_string(e.code())), e.what(), exit_code_for(e.code()));
}

fs::path default_log_dir() {
  if (const char* env = std::getenv("TELEOP_LOG_DIR"); env && *env) return env;
  return "logs";
}

struct RunArgs {
  std::string scenario;
  std::string driver;
  std::uint64_t seed = 42;
  int trials = 1;
  std::string log_dir;
  bool csv = false;
  std::uint16_t tcp_port = 7450;
  std::uint16_t ws_port = 7451;
};

int cmd_run(const RunArgs& a) {
  Scenario sc;
  try {
    sc = load_scenario(a.scenario);
  } catch (const Error& e) {
    return report(std::string(to_string(e.code())), e.what(), 2);
  }
  if (a.trials < 1) return report("InvalidArgument", "--trials must be >= 1", 2);

  const bool network = a.driver == "network";
  fs::path script;
  if (!network) {
    if (a.driver.rfind("scripted:", 0) != 0) {
      return report("InvalidArgument", "--driver must be scripted:<path> or network", 2);
    }
    script = a.driver.substr(9);
  }
  std::optional<ScriptedDriver> scripted;
  if (!network) {
    try {
      scripted = ScriptedDriver::load(script);
    } catch (const Error& e) {
      return report(std::string(to_string(e.code())), e.what(), 2);
    }
  }

  const fs::path log_dir = a.log_dir.empty() ? default_log_dir() : fs::path(a.log_dir);
  install_signals();

  std::unique_ptr<ProtocolServer> server;
  if (network) {
    ServerConfig cfg = server_config_for(sc);
    cfg.tcp_port = a.tcp_port;
    cfg.ws_port = a.ws_port;
    server = std::make_unique<ProtocolServer>(cfg);
    try {
      server->start();
    } catch (const Error& e) {
      return report(e);
    }
    std::cerr << "listening tcp " << server->tcp_port() << " ws " << server->ws_port() << '\n';
  }

  std::vector<TrialResult> results;
  bool errored = false;
  for (int i = 0; i < a.trials && !g_stop; ++i) {
    const std::uint64_t seed = a.seed + static_cast<std::uint64_t>(i);
    const fs::path log_path =
        log_dir / (sc.name + "_seed" + std::to_string(seed) + "_trial" + std::to_string(i) + ".ndjson");
    try {
      Controller ctl(sc, seed);
      TrialOptions opt;
      opt.stop = &g_stop;
      opt.driver = network ? "network" : "scripted:" + script.string();
      LogWriter writer(log_path, ctl.header(opt.driver));
      TrialRun run;
      if (network) {
        NetworkInput input(*server, sc.home);
        Publisher pub(*server);
        opt.realtime_factor = 1.0;
        opt.on_tick = [&](const Controller& c, const TickRecord& r) { pub(c, r); };
        run = run_trial(ctl, input, &writer, opt);
      } else {
        ScriptedDriver driver = *scripted;
        run = run_trial(ctl, driver, &writer, opt);
      }
      results.push_back(run.result);
      std::cerr << "trial " << i << " seed " << seed << ": "
                << (run.result.success ? "success" : "failure") << "  log " << log_path.string()
                << '\n';
    } catch (const Error& e) {
      errored = true;
      report(e);
    }
  }
  if (!results.empty()) {
    const Summary s = aggregate(results);
    std::cout << (a.csv ? format_csv(results, s) : format_table(results, s));
  }
  if (server) server->stop();
  return errored ? 1 : 0;
}

int cmd_replay(const std::string& log_path, std::optional<double> speed, const std::string& scenario) {
  if (speed && !(*speed > 0.0)) return report("InvalidArgument", "--speed must be > 0", 2);
  try {
    const DemoLog log = read_log(log_path);
    const fs::path sc_path = scenario.empty() ? fs::path(log.header.scenario_path) : fs::path(scenario);
    const Scenario sc = load_scenario(sc_path);
    const TrialResult r = replay_log(log, sc, speed.value_or(0.0));
    std::cout << "replay ok: " << log.records.size() << " records, success "
              << (r.success ? "yes" : "no") << '\n';
    return 0;
  } catch (const Error& e) {
    return report(e);
  }
}

struct ServeArgs {
  std::string scenario;
  std::uint64_t seed = 42;
  std::uint16_t tcp_port = 7450;
  std::uint16_t ws_port = 7451;
  std::string bind = "127.0.0.1";
  std::string log_dir;
  double heartbeat_timeout = 3.0;
};

int cmd_serve(const ServeArgs& a) {
  Scenario sc;
  try {
    sc = load_scenario(a.scenario);
  } catch (const Error& e) {
    return report(std::string(to_string(e.code())), e.what(), 2);
  }
  sc.max_duration = std::numeric_limits<double>::infinity();
  ServerConfig cfg = server_config_for(sc);
  cfg.bind = a.bind;
  cfg.tcp_port = a.tcp_port;
  cfg.ws_port = a.ws_port;
  cfg.heartbeat_timeout = a.heartbeat_timeout;
  ProtocolServer server(cfg);
  try {
    server.start();
  } catch (const Error& e) {
    return report(e);
  }
  install_signals();
  std::cout << "listening tcp " << server.tcp_port() << " ws " << server.ws_port() << std::endl;

  const fs::path log_dir = a.log_dir.empty() ? default_log_dir() : fs::path(a.log_dir);
  const fs::path log_path = log_dir / (sc.name + "_serve_seed" + std::to_string(a.seed) + ".ndjson");
  int code = 0;
  try {
    Controller ctl(sc, a.seed);
    TrialOptions opt;
    opt.stop = &g_stop;
    opt.driver = "network";
    opt.realtime_factor = 1.0;
    opt.keep_records = false;
    Publisher pub(server);
    opt.on_tick = [&](const Controller& c, const TickRecord& r) { pub(c, r); };
    LogWriter writer(log_path, ctl.header(opt.driver));
    NetworkInput input(server, sc.home);
    const TrialRun run = run_trial(ctl, input, &writer, opt);
    std::cout << "stopped (" << run.log.end_reason.value_or("?") << "), log " << log_path.string()
              << std::endl;
  } catch (const Error& e) {
    code = report(e);
  }
  server.stop();
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shared-control teleoperation: simulation runs, log replay, live service"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run trials of a scenario");
  run_cmd->add_option("--scenario", run.scenario, "Scenario YAML file")->required();
  run_cmd->add_option("--driver", run.driver, "scripted:<path> or network")->required();
  run_cmd->add_option("--seed", run.seed, "Seed of the first trial");
  run_cmd->add_option("--trials", run.trials, "Number of trials");
  run_cmd->add_option("--log-dir", run.log_dir, "Log directory (default $TELEOP_LOG_DIR or ./logs)");
  run_cmd->add_flag("--csv", run.csv, "Print the summary as CSV");
  run_cmd->add_option("--tcp-port", run.tcp_port, "TCP port for the network driver");
  run_cmd->add_option("--ws-port", run.ws_port, "Websocket port for the network driver");

  std::string log_path, replay_scenario;
  std::optional<double> speed;
  auto* replay_cmd = app.add_subcommand("replay", "Replay a log and verify determinism");
  replay_cmd->add_option("log", log_path, "Log file")->required();
  replay_cmd->add_option("--speed", speed, "Playback speed factor (default: as fast as possible)");
  replay_cmd->add_option("--scenario", replay_scenario, "Scenario file (default: path in the log)");

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the live control service");
  serve_cmd->add_option("--scenario", serve.scenario, "Scenario YAML file")->required();
  serve_cmd->add_option("--seed", serve.seed, "Seed");
  serve_cmd->add_option("--tcp-port", serve.tcp_port, "TCP port (0 picks one)");
  serve_cmd->add_option("--ws-port", serve.ws_port, "Websocket port (0 picks one)");
  serve_cmd->add_option("--bind", serve.bind, "Bind address");
  serve_cmd->add_option("--log-dir", serve.log_dir, "Log directory");
  serve_cmd->add_option("--heartbeat-timeout", serve.heartbeat_timeout, "Seconds before a silent client is dropped");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report("InvalidArgument", e.what(), 2);
  }

  if (*run_cmd) return cmd_run(run);
  if (*replay_cmd) return cmd_replay(log_path, speed, replay_scenario);
  return cmd_serve(serve);
}
