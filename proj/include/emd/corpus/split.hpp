#pragma once

#include <cstdint>
#include <vector>

#include "emd/corpus/trace.hpp"

namespace emd::corpus {

struct Split {
  std::vector<ApiTrace> train;
  std::vector<ApiTrace> test;
};

/// Deterministic train/test split.
///
/// Without source tags (or when every trace has its own source) the split is
/// stratified per label: round(n_c * test_fraction) traces of each class go
/// to test. With several shared source tags, whole sources are assigned to
/// one side so no source straddles the split; per-label balance is then best
/// effort. Both outputs keep the input order.
Split split(const std::vector<ApiTrace>& traces, double test_fraction, std::uint64_t seed);

}  // namespace emd::corpus
