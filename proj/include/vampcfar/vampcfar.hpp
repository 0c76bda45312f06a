#pragma once

#include "vampcfar/errors.hpp"
#include "vampcfar/signal_model.hpp"
#include "vampcfar/vamp_core.hpp"
#include "vampcfar/params.hpp"
#include "vampcfar/pcd_detector.hpp"
#include "vampcfar/experiments.hpp"
#include "vampcfar/report_io.hpp"
