#ifndef PLANSCHED_PLANSCHED_HPP
#define PLANSCHED_PLANSCHED_HPP

#include "plansched/core.hpp"
#include "plansched/perf_model.hpp"
#include "plansched/plan_space.hpp"
#include "plansched/sensitivity.hpp"
#include "plansched/fitting.hpp"
#include "plansched/json_io.hpp"
#include "plansched/scheduler.hpp"
#include "plansched/trace.hpp"
#include "plansched/simulator.hpp"
#include "plansched/config.hpp"

#endif
