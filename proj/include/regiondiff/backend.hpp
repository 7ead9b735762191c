#pragma once

#include <chrono>
#include <memory>
#include <string>

#include "regiondiff/denoiser.hpp"

namespace regiondiff {

// "analytic" or "external:HOST:PORT"; a positive latency wraps the result in
// a LatencySimulator.
std::shared_ptr<Denoiser> make_backend(const std::string& name, const NoiseSchedule& schedule,
                                       std::chrono::milliseconds latency = {});

}  // namespace regiondiff
