#include "emd/corpus/split.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "emd/error.hpp"
#include "emd/numerics/rng.hpp"

namespace emd::corpus {

Split split(const std::vector<ApiTrace>& traces, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("split: test_fraction must be in (0, 1)");
  std::map<Label, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < traces.size(); ++i) by_label[traces[i].label].push_back(i);
  for (const auto& [label, idx] : by_label) {
    if (idx.size() < 2) {
      throw DataError("split: class '" + std::string(label_name(label)) + "' has fewer than 2 traces");
    }
  }
  if (traces.empty()) throw DataError("split: no traces");

  std::vector<bool> in_test(traces.size(), false);
  std::map<std::string, std::vector<std::size_t>> by_source;
  for (std::size_t i = 0; i < traces.size(); ++i) by_source[traces[i].source].push_back(i);

  if (by_source.size() <= 1 || by_source.size() == traces.size()) {
    for (auto& [label, idx] : by_label) {
      Rng rng(mix_seed(seed, static_cast<std::uint64_t>(label)));
      rng.shuffle(idx.begin(), idx.end());
      auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * test_fraction));
      n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
      for (std::size_t k = 0; k < n_test; ++k) in_test[idx[k]] = true;
    }
  } else {
    std::vector<std::string> sources;
    for (const auto& [name, idx] : by_source) sources.push_back(name);
    Rng rng(mix_seed(seed, 7));
    rng.shuffle(sources.begin(), sources.end());
    const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(traces.size()) * test_fraction));
    std::size_t n_test = 0;
    std::size_t groups_in_test = 0;
    for (const std::string& s : sources) {
      const auto& idx = by_source[s];
      if (groups_in_test + 1 == sources.size()) break;  // keep one source for training
      if (n_test == 0 || n_test + idx.size() <= target) {
        for (std::size_t i : idx) in_test[i] = true;
        n_test += idx.size();
        ++groups_in_test;
      }
      if (n_test >= target) break;
    }
  }

  Split out;
  for (std::size_t i = 0; i < traces.size(); ++i) (in_test[i] ? out.test : out.train).push_back(traces[i]);
  return out;
}

}  // namespace emd::corpus
