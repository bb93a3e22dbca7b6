#include "catt/trainer.hpp"

#include <nlohmann/json.hpp>

namespace catt {

void write_run_log(std::ostream& os, const RunLog& log) {
  for (const auto& r : log.records) {
    nlohmann::json j;
    j["iteration"] = r.iteration;
    j["loss"] = r.loss;
    j["wall_ms"] = r.wall_ms;
    j["variant"] = log.variant;
    j["tau"] = log.temperature;
    os << j.dump() << '\n';
  }
}

}  // namespace catt
