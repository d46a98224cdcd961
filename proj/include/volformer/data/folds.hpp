#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "volformer/data/dataset.hpp"

namespace volformer {

struct FoldPlan {
  std::size_t fold_count = 0;
  std::uint64_t seed = 0;
  std::string scheme;                              // "stratified" or "site"
  std::map<std::string, std::size_t> assignments;  // subject_id → fold
  std::vector<std::string> fold_labels;            // human-readable name per fold

  std::size_t fold_of(const std::string& subject_id) const;
  /// Indices into `subjects` of the train and test side of `fold`.
  void split(const std::vector<SubjectRecord>& subjects, std::size_t fold, std::vector<std::size_t>& train,
             std::vector<std::size_t>& test) const;
};

/// Class-stratified subject assignment: each class's subjects (sorted by id,
/// then shuffled under `seed`) are dealt round-robin, continuing across
/// classes. Throws PlanningError naming a class with fewer than k subjects.
FoldPlan plan_folds(const std::vector<SubjectRecord>& subjects, std::size_t k = 5, std::uint64_t seed = 0);

/// One fold per acquisition site: the test side of fold i is every subject of
/// the i-th site (sites sorted by id).
FoldPlan plan_site_folds(const std::vector<SubjectRecord>& subjects);

}  // namespace volformer
