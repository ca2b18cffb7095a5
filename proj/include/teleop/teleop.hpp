#pragma once

#include "teleop/controller.hpp"
#include "teleop/demo_log.hpp"
#include "teleop/dynamics.hpp"
#include "teleop/error.hpp"
#include "teleop/geometry.hpp"
#include "teleop/kinematics.hpp"
#include "teleop/metrics.hpp"
#include "teleop/perception.hpp"
#include "teleop/planner.hpp"
#include "teleop/protocol.hpp"
#include "teleop/scenario.hpp"
#include "teleop/server.hpp"
#include "teleop/shared_control.hpp"
#include "teleop/simworld.hpp"
#include "teleop/trial.hpp"
