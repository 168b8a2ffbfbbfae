#pragma once

#include <functional>
#include <vector>

#include "mdpcf/encoding.hpp"
#include "mdpcf/solver.hpp"

namespace mdpcf::detail {

/// Additional objective contribution threaded through the local search.
/// `smooth` is added to the smoothed objective and may accumulate into the
/// gradient; `exact` is added to the exact combined distance when comparing
/// or accepting candidates.
struct ExtraTerm {
  std::function<double(const std::vector<double>&, std::vector<double>*)> smooth;
  std::function<double(const Strategy&)> exact;
};

/// The full synthesis pipeline. With `extra == nullptr` this is `solve`;
/// with an extra term the shortcut for already-satisfied bounds and the
/// exhaustive certification stage are skipped, since both only make sense
/// for the plain distance objective.
SynthesisResult solve_internal(const SynthesisQuery& q, const SolverConfig& config,
                               const ExtraTerm* extra);

}  // namespace mdpcf::detail
