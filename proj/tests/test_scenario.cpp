#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "test_support.hpp"

using namespace teleop;
using teleop::testing::scenario_path;

namespace {

std::string pickup_text() {
  std::ifstream in(scenario_path("pickup.yaml"));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string replace(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  EXPECT_NE(pos, std::string::npos) << from;
  if (pos != std::string::npos) text.replace(pos, from.size(), to);
  return text;
}

int line_of(const std::string& text, const std::string& needle) {
  const auto pos = text.find(needle);
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

Error parse_error(const std::string& text) {
  try {
    parse_scenario(text, "edited.yaml", scenario_path(""));
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "parsed without error";
  return Error(ErrorCode::InvalidArgument, "");
}

}  // namespace

TEST(Scenario, BundledPickupLoads) {
  const Scenario& sc = teleop::testing::pickup();
  EXPECT_EQ(sc.name, "pickup");
  EXPECT_EQ(sc.follower().dof(), 6u);
  EXPECT_EQ(sc.leader.chain.dof(), 6u);
  EXPECT_EQ(sc.target().id, 1);
  EXPECT_EQ(sc.obstacles.size(), 1u);
  EXPECT_EQ(sc.hash.size(), 64u);
  EXPECT_TRUE(sc.follower().within_limits(sc.home));
  EXPECT_EQ(sc.sim.dt, 0.01);
}

TEST(Scenario, NoisyVariantDiffersOnlyInNoise) {
  const Scenario noisy = load_scenario(scenario_path("pickup_noisy.yaml"));
  EXPECT_EQ(noisy.sim.camera.sigma_position, 0.005);
  EXPECT_EQ(noisy.sim.camera.sigma_orientation, 0.02);
  EXPECT_NE(noisy.hash, teleop::testing::pickup().hash);
}

TEST(Scenario, HashCoversContent) {
  const std::string text = pickup_text();
  const Scenario a = parse_scenario(text, "a.yaml", scenario_path(""));
  const Scenario b = parse_scenario(text, "b.yaml", scenario_path(""));
  EXPECT_EQ(a.hash, b.hash);
  const Scenario c = parse_scenario(replace(text, "max_duration: 60", "max_duration: 61"), "c.yaml",
                                    scenario_path(""));
  EXPECT_NE(a.hash, c.hash);
}

TEST(Scenario, MissingFileIsIoFailure) {
  try {
    load_scenario("/no/such/scenario.yaml");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoFailure);
  }
}

TEST(Scenario, ErrorsPointAtTheOffendingLine) {
  const std::string text = pickup_text();
  struct Case {
    std::string from, to, needle;
  };
  const Case cases[] = {
      {"home: [1.0, -0.2, 1.2, 0.0, 0.55, 0.0]", "home: [1.0, -0.2, 1.2]", "home:"},
      {"home: [1.0, -0.2, 1.2, 0.0, 0.55, 0.0]", "home: [9.0, -0.2, 1.2, 0.0, 0.55, 0.0]", "home:"},
      {"half_fov: 0.7", "half_fov: 3.0", "half_fov:"},
      {"kind: box", "kind: cone", "kind: cone"},
      {"chain: leader6.yaml", "chain: missing.yaml", "missing.yaml"},
  };
  for (const auto& c : cases) {
    const std::string edited = replace(text, c.from, c.to);
    const Error e = parse_error(edited);
    EXPECT_EQ(e.code(), ErrorCode::ConfigError) << e.what();
    const std::string want = "edited.yaml:" + std::to_string(line_of(edited, c.needle)) + ":";
    EXPECT_NE(std::string(e.what()).find(want), std::string::npos) << e.what() << " / " << want;
  }
}

TEST(Scenario, SyntaxErrorCarriesLine) {
  const Error e = parse_error("name: x\nfollower: [unclosed\n");
  EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  EXPECT_NE(std::string(e.what()).find("edited.yaml:"), std::string::npos);
}

TEST(Scenario, LeaderDofMustMatchFollower) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("teleop_scn_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  fs::copy_file(scenario_path("arm6.yaml"), dir / "arm6.yaml", fs::copy_options::overwrite_existing);
  std::ofstream(dir / "one.yaml") << "name: one\njoints:\n  - name: j\n    axis: [0, 0, 1]\n"
                                        "    limits: {lower: -1, upper: 1, velocity: 1, acceleration: 1}\n";
  const std::string text = replace(pickup_text(), "chain: leader6.yaml", "chain: one.yaml");
  try {
    parse_scenario(text, "edited.yaml", dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
    EXPECT_NE(std::string(e.what()).find("one-to-one"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}
