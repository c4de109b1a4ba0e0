#pragma once

#include "netroute/common.hpp"
#include "netroute/net_model.hpp"
#include "netroute/econ.hpp"
#include "netroute/theory.hpp"
#include "netroute/controllers.hpp"
#include "netroute/toyworld.hpp"
#include "netroute/learning.hpp"
#include "netroute/sim.hpp"
#include "netroute/config.hpp"
#include "netroute/cli.hpp"
