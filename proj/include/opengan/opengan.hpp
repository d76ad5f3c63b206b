#pragma once

// Umbrella header.
#include "opengan/common.hpp"
#include "opengan/data.hpp"
#include "opengan/nn.hpp"
#include "opengan/models.hpp"
#include "opengan/metrics.hpp"
#include "opengan/trainer.hpp"
#include "opengan/selector.hpp"
#include "opengan/baselines.hpp"
#include "opengan/protocols.hpp"
#include "opengan/commands.hpp"
