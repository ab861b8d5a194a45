#pragma once

#include "campaign.hpp"
#include "error.hpp"
#include "event_log.hpp"
#include "event_loop.hpp"
#include "executors.hpp"
#include "metrics.hpp"
#include "overlay.hpp"
#include "resource.hpp"
#include "rng.hpp"
#include "scheduler.hpp"
#include "task.hpp"
#include "time.hpp"
#include "workflow.hpp"
#include "workload.hpp"
