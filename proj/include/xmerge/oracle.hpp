#pragma once

#include <string>

#include "xmerge/subspace_pca.hpp"

namespace xmerge {

/// Builds a loss oracle from a descriptor:
///   toy:<run-dir>       held-out loss of a finished toy training run
///   valley:<spec-file>  closed-form river-valley loss (also valley:default,
///                       valley:high-noise)
LossFn make_loss_oracle(const std::string& descriptor);

}  // namespace xmerge
