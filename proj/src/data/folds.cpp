#include "volformer/data/folds.hpp"

#include <algorithm>
#include <set>

#include "volformer/core/error.hpp"
#include "volformer/core/random.hpp"

namespace volformer {

std::size_t FoldPlan::fold_of(const std::string& subject_id) const {
  auto it = assignments.find(subject_id);
  if (it == assignments.end()) throw PlanningError("subject " + subject_id + " is not part of the fold plan");
  return it->second;
}

void FoldPlan::split(const std::vector<SubjectRecord>& subjects, std::size_t fold, std::vector<std::size_t>& train,
                     std::vector<std::size_t>& test) const {
  if (fold >= fold_count) throw IndexError("fold " + std::to_string(fold) + " of " + std::to_string(fold_count));
  train.clear();
  test.clear();
  for (std::size_t i = 0; i < subjects.size(); ++i) (fold_of(subjects[i].subject_id) == fold ? test : train).push_back(i);
}

FoldPlan plan_folds(const std::vector<SubjectRecord>& subjects, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw PlanningError("cross-validation needs at least 2 folds, got " + std::to_string(k));
  std::map<std::size_t, std::vector<std::string>> by_class;
  std::set<std::string> seen;
  for (const auto& s : subjects) {
    if (!seen.insert(s.subject_id).second) throw PlanningError("subject " + s.subject_id + " is listed twice");
    by_class[s.label].push_back(s.subject_id);
  }
  FoldPlan plan;
  plan.fold_count = k;
  plan.seed = seed;
  plan.scheme = "stratified";
  for (auto& [label, ids] : by_class) {
    if (ids.size() < k) {
      throw PlanningError("class " + std::to_string(label) + " has " + std::to_string(ids.size()) +
                          " subjects, fewer than the " + std::to_string(k) + " folds requested");
    }
  }
  std::size_t next = 0;
  for (auto& [label, ids] : by_class) {
    std::sort(ids.begin(), ids.end());
    Rng rng(derive_seed(seed, {0xF01D, label}));
    rng.shuffle(ids);
    for (const auto& id : ids) {
      plan.assignments[id] = next;
      next = (next + 1) % k;
    }
  }
  for (std::size_t f = 0; f < k; ++f) plan.fold_labels.push_back("fold" + std::to_string(f + 1));
  return plan;
}

FoldPlan plan_site_folds(const std::vector<SubjectRecord>& subjects) {
  std::set<std::string> sites;
  for (const auto& s : subjects) sites.insert(s.site_id);
  if (sites.size() < 2) {
    throw PlanningError("leave-site-out folds need at least 2 sites, found " + std::to_string(sites.size()));
  }
  const std::vector<std::string> ordered(sites.begin(), sites.end());
  FoldPlan plan;
  plan.fold_count = ordered.size();
  plan.scheme = "site";
  plan.fold_labels = ordered;
  for (const auto& s : subjects) {
    const auto pos = std::find(ordered.begin(), ordered.end(), s.site_id) - ordered.begin();
    if (!plan.assignments.emplace(s.subject_id, std::size_t(pos)).second) {
      throw PlanningError("subject " + s.subject_id + " is listed twice");
    }
  }
  return plan;
}

}  // namespace volformer
