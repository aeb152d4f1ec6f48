#pragma once

#include "dgtr/config.hpp"
#include "dgtr/gradcheck.hpp"
#include "dgtr/probes.hpp"
#include "dgtr/profiler.hpp"
#include "dgtr/trainer.hpp"
