#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "rosa/core/error.hpp"
#include "rosa/core/rng.hpp"

namespace rosa::synth {

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle, then round-robin assignment: every subject lands in exactly one test fold.
inline std::vector<Fold> kfold_split(std::size_t n_subjects, std::size_t k, std::uint64_t seed) {
  if (k < 2 || k > n_subjects) {
    throw InvalidArgument("kfold_split: need 2 <= k <= subjects, got k=" + std::to_string(k) + " for " +
                          std::to_string(n_subjects) + " subjects");
  }
  std::vector<std::size_t> order(n_subjects);
  for (std::size_t i = 0; i < n_subjects; ++i) order[i] = i;
  Rng rng(Rng::mix(seed, 0xF01D));
  for (std::size_t i = n_subjects; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<Fold> folds(k);
  for (std::size_t i = 0; i < n_subjects; ++i) folds[i % k].test.push_back(order[i]);
  for (std::size_t f = 0; f < k; ++f) {
    std::sort(folds[f].test.begin(), folds[f].test.end());
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) folds[f].train.insert(folds[f].train.end(), folds[g].test.begin(), folds[g].test.end());
    std::sort(folds[f].train.begin(), folds[f].train.end());
  }
  return folds;
}

}  // namespace rosa::synth
