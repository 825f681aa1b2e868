#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "triage/corpus.hpp"

namespace triage {

/// Labeled ticket generator with class-specific keyword distributions.
/// Change tickets share the fault-heavy background of Problem tickets and
/// differ by a few change keywords, so an unweighted generative model
/// under-recalls the minority class.
struct SynthOptions {
  std::size_t documents = 1200;
  PerClass<std::size_t> ratio{1, 6, 3};
  std::uint64_t seed = 0;
};

std::vector<RawTicket> generate_synthetic(const SynthOptions& opts);

/// Writes tickets as CSV with header subject,body,type.
void write_tickets_csv(std::ostream& out, std::span<const RawTicket> tickets);

}  // namespace triage
