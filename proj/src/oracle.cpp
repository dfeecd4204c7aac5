#include "xmerge/oracle.hpp"

#include <memory>

#include "xmerge/error.hpp"
#include "xmerge/river_valley.hpp"
#include "xmerge/toy_trainer.hpp"

namespace xmerge {

LossFn make_loss_oracle(const std::string& descriptor) {
  const auto colon = descriptor.find(':');
  if (colon == std::string::npos) throw_usage("oracle must look like toy:<run-dir> or valley:<spec-file>");
  const std::string kind = descriptor.substr(0, colon);
  const std::string arg = descriptor.substr(colon + 1);
  if (arg.empty()) throw_usage("oracle argument is empty");

  if (kind == "toy") {
    auto handle = std::make_shared<LossOracleHandle>(load_toy_oracle(arg));
    return [handle](const ParameterVector& p) { return evaluate_loss(*handle, p); };
  }
  if (kind == "valley") {
    ValleySpec spec = arg == "default"      ? default_valley_spec()
                      : arg == "high-noise" ? high_noise_valley_spec()
                                            : load_valley_spec(arg);
    auto valley = std::make_shared<RiverValley>(std::move(spec));
    return [valley](const ParameterVector& p) { return valley->loss(p); };
  }
  throw_usage("unknown oracle kind: " + kind);
}

}  // namespace xmerge
