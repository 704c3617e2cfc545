#include <gtest/gtest.h>

#include "properties.hpp"

using namespace statelens;

namespace {

void expect_ok(const props::Outcome& o) {
  EXPECT_GT(o.cases, 0u);
  for (std::size_t k = 0; k < o.violations.size() && k < 10; ++k) ADD_FAILURE() << o.violations[k];
}

}  // namespace

TEST(Property, VmDeterminism) { expect_ok(props::over_seeds(props::vm_determinism)); }

TEST(Property, SeedIndependence) { expect_ok(props::over_seeds(props::seed_independence)); }

TEST(Property, AlignmentTotality) { expect_ok(props::over_seeds(props::alignment_totality)); }

TEST(Property, MemdiffMonotoneAndDisjoint) {
  expect_ok(props::over_seeds(props::memdiff_monotone_disjoint));
}

TEST(Property, LearnerSoundAndComplete) {
  expect_ok(props::over_seeds(props::learner_soundness_completeness));
}

TEST(Property, SubstitutionAgreesWithNotStateDefining) {
  for (const auto& spec : props::finite_corpus()) {
    auto r = learner::learn(spec);
    auto subjects = props::merged_subjects(r);
    auto explained = props::explained_subjects(spec, r);
    subjects.insert(subjects.end(), explained.begin(), explained.end());
    auto o = props::substitution_oracle(spec, r.candidates, subjects, 3);
    EXPECT_TRUE(subjects.empty() || o.cases > 0) << spec.name;
    for (const auto& v : o.violations) ADD_FAILURE() << v;
  }
}
