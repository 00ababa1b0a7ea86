#pragma once

// Randomized uIP-to-full scenarios for property checks: loss in [0, 0.3],
// one-way latency in [1, 100] ms, split on or off, direct or via a gateway.

#include "nsc/scenario.hpp"

namespace randscn
{
    nsc::scenario::Scenario make(std::uint64_t seed);
}
