#include "regiondiff/backend.hpp"

#include "regiondiff/wire.hpp"

namespace regiondiff {

std::shared_ptr<Denoiser> make_backend(const std::string& name, const NoiseSchedule& schedule,
                                       std::chrono::milliseconds latency) {
    std::shared_ptr<Denoiser> den;
    if (name == "analytic") {
        den = std::make_shared<AnalyticDenoiser>(schedule);
    } else if (name.rfind("external:", 0) == 0) {
        den = std::make_shared<wire::ClientDenoiser>(wire::parse_address(name.substr(9)));
    } else {
        throw ParameterError("unknown backend '" + name + "' (expected analytic or external:HOST:PORT)");
    }
    if (latency.count() > 0) {
        den = std::make_shared<LatencySimulator>(den, latency);
    }
    return den;
}

}  // namespace regiondiff
