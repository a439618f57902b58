#pragma once

#include "m2ru/errors.hpp"
#include "m2ru/tensor.hpp"
#include "m2ru/random.hpp"
#include "m2ru/miru.hpp"
#include "m2ru/dfa.hpp"
#include "m2ru/replay.hpp"
#include "m2ru/fixed_point.hpp"
#include "m2ru/crossbar.hpp"
#include "m2ru/latency.hpp"
#include "m2ru/hw_network.hpp"
#include "m2ru/reliability.hpp"
#include "m2ru/harness.hpp"
#include "m2ru/dataset_io.hpp"
#include "m2ru/config.hpp"
#include "m2ru/checkpoint.hpp"
#include "m2ru/metrics.hpp"
