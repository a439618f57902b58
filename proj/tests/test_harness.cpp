#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace m2ru;
using m2ru::testing::small_config;
using m2ru::testing::striped_images;

namespace {

LabeledSet labeled_features(std::size_t n, std::size_t dim, int classes, std::uint32_t seed) {
  XorShift32 rng(seed);
  LabeledSet s{Matrix(n, dim), {}, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(classes));
    auto row = s.samples.row(i);
    for (std::size_t k = 0; k < dim; ++k) row[k] = rng.uniform(-3.0, 5.0);
    row[static_cast<std::size_t>(label) % dim] = 6.0;
    s.labels.push_back(label);
  }
  return s;
}

std::multiset<double> values(const Matrix& m) { return {m.flat().begin(), m.flat().end()}; }

}  // namespace

TEST(RandomPermutation, IsAPermutation) {
  XorShift32 rng(3);
  for (std::size_t n : {1u, 2u, 17u, 784u}) {
    auto p = random_permutation(n, rng);
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(p[i], i);
  }
}

TEST(PermutedStream, TaskZeroIsIdentityAndPixelHistogramsMatch) {
  const LabeledSet train = striped_images(30, 6, 5, 10, 1);
  const LabeledSet test = striped_images(10, 6, 5, 10, 2);
  const TaskStream s = build_permuted_mnist(train, test, 3, 9);
  ASSERT_EQ(s.tasks.size(), 3u);
  EXPECT_EQ(s.steps, 6u);
  EXPECT_EQ(s.features, 5u);
  EXPECT_EQ(s.classes, 10u);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto src = train.samples.row(i);
    const auto seq = s.tasks[0].train[i].inputs.flat();
    EXPECT_TRUE(std::equal(src.begin(), src.end(), seq.begin()));
  }
  EXPECT_NE(s.tasks[1].permutation, s.tasks[2].permutation);
  for (std::size_t t = 1; t < 3; ++t) {
    for (std::size_t i = 0; i < train.size(); ++i) {
      const Example& a = s.tasks[0].train[i];
      const Example& b = s.tasks[t].train[i];
      EXPECT_EQ(a.label, b.label);
      EXPECT_EQ(values(a.inputs), values(b.inputs));
      for (std::size_t p = 0; p < 30; ++p)
        EXPECT_EQ(b.inputs.flat()[p], a.inputs.flat()[s.tasks[t].permutation[p]]);
    }
    ASSERT_EQ(s.tasks[t].test.size(), test.size());
  }
}

TEST(PermutedStream, DeterministicAndValidated) {
  const LabeledSet train = striped_images(8, 4, 4, 4, 1);
  const TaskStream a = build_permuted_mnist(train, train, 2, 5);
  const TaskStream b = build_permuted_mnist(train, train, 2, 5);
  EXPECT_EQ(a.tasks[1].permutation, b.tasks[1].permutation);
  EXPECT_THROW(build_permuted_mnist(train, train, 0, 5), ConfigError);
  LabeledSet flat = train;
  flat.image_rows = 0;
  EXPECT_THROW(build_permuted_mnist(flat, flat, 1, 5), ConfigError);
}

TEST(SplitStream, ClassesDisjointAndRemapped) {
  const LabeledSet train = labeled_features(100, 12, 10, 4);
  const LabeledSet test = labeled_features(40, 12, 10, 5);
  const TaskStream s = build_split_features(train, test, 2, 3, 4);
  ASSERT_EQ(s.tasks.size(), 5u);
  EXPECT_EQ(s.classes, 2u);
  std::set<int> seen;
  for (std::size_t t = 0; t < s.tasks.size(); ++t) {
    const Task& task = s.tasks[t];
    ASSERT_EQ(task.classes.size(), 2u);
    EXPECT_EQ(task.classes[0], static_cast<int>(2 * t));
    EXPECT_EQ(task.classes[1], static_cast<int>(2 * t + 1));
    for (int c : task.classes) EXPECT_TRUE(seen.insert(c).second);
    EXPECT_EQ(task.train.size(), 20u);
    EXPECT_EQ(task.test.size(), 8u);
    for (const Example& ex : task.train) {
      EXPECT_TRUE(ex.label == 0 || ex.label == 1);
      EXPECT_EQ(ex.inputs.rows(), 3u);
      EXPECT_EQ(ex.inputs.cols(), 4u);
      for (double v : ex.inputs.flat()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
  // The first task-3 example has original label 6, the first class of that task.
  const auto seq = s.tasks[3].train[0].inputs.flat();
  EXPECT_EQ(s.tasks[3].train[0].label, 0);
  EXPECT_EQ(s.tasks[3].train[1].label, 1);
  EXPECT_EQ(seq[6], 1.0);
}

TEST(SplitStream, RejectsBadShapes) {
  const LabeledSet train = labeled_features(30, 12, 3, 4);
  EXPECT_THROW(build_split_features(train, train, 2, 3, 4), ConfigError);
  EXPECT_THROW(build_split_features(train, train, 3, 5, 4), ConfigError);
  EXPECT_THROW(build_split_features(train, train, 0, 3, 4), ConfigError);
}

TEST(AccuracyMatrix, MeanOfLastRow) {
  AccuracyMatrix r{3, {{0.95}, {0.9, 0.85}, {0.9, 0.8, 0.7}}};
  EXPECT_NEAR(mean_accuracy(r), 0.8, 1e-12);
  AccuracyMatrix partial{3, {{0.95}, {0.9, 0.85}}};
  EXPECT_THROW(mean_accuracy(partial), ConsistencyError);
  EXPECT_THROW(mean_accuracy(AccuracyMatrix{}), ConsistencyError);
}

TEST(ContinualConfig, NamedSeedsAndOverrides) {
  ContinualConfig c;
  c.seed = 5;
  EXPECT_EQ(c.named_seed("weights"), derive_seed(5, "weights"));
  c.seed_overrides["weights"] = 99;
  EXPECT_EQ(c.named_seed("weights"), 99u);
  EXPECT_EQ(c.named_seed("feedback"), derive_seed(5, "feedback"));
  c.seed_overrides["feedback"] = 0;
  EXPECT_THROW(c.named_seed("feedback"), SeedError);
  std::set<std::uint32_t> distinct;
  ContinualConfig d;
  for (const auto& name : seed_stream_names()) distinct.insert(d.named_seed(name));
  EXPECT_EQ(distinct.size(), seed_stream_names().size());
}

class ContinualRunTest : public ::testing::TestWithParam<BackendKind> {
 protected:
  TaskStream stream = build_permuted_mnist(striped_images(40, 6, 6, 6, 11),
                                           striped_images(12, 6, 6, 6, 12), 3, 13);
};

TEST_P(ContinualRunTest, FillsAccuracyMatrixAndCountsWrites) {
  ContinualRun run(stream, small_config(GetParam()));
  run.run();
  ASSERT_TRUE(run.done());
  const RunState& st = run.state();
  ASSERT_EQ(st.accuracy.rows.size(), 3u);
  for (std::size_t j = 0; j < 3; ++j) {
    ASSERT_EQ(st.accuracy.rows[j].size(), j + 1);
    for (double a : st.accuracy.rows[j]) {
      EXPECT_GE(a, 0.0);
      EXPECT_LE(a, 1.0);
    }
  }
  EXPECT_EQ(st.updates, 120u);
  EXPECT_EQ(st.steps.size(), 120u);
  std::uint64_t logged = 0;
  for (const StepLog& l : st.steps) logged += l.weight_writes;
  EXPECT_EQ(logged, st.weight_writes);
  EXPECT_EQ(hidden_write_counts(st.backend).total() + readout_write_counts(st.backend).total(),
            st.weight_writes);
  ASSERT_EQ(st.snapshots.size(), 3u);
  EXPECT_EQ(st.snapshots.back().total_writes, st.weight_writes);
  EXPECT_EQ(st.buffer.occupancy(), std::min<std::size_t>(24, 120));
  // Replay starts after the first stored example.
  EXPECT_EQ(st.steps[0].replayed, 0u);
  EXPECT_EQ(st.steps[1].replayed, 1u);
}

TEST_P(ContinualRunTest, DeterministicAndResumable) {
  const ContinualConfig cfg = small_config(GetParam());
  ContinualRun a(stream, cfg), b(stream, cfg), c(stream, cfg);
  a.run();
  b.run();
  EXPECT_EQ(a.state().accuracy, b.state().accuracy);
  EXPECT_EQ(a.state().steps, b.state().steps);
  c.run(57);
  ContinualRun resumed(stream, cfg, c.state());
  resumed.run();
  EXPECT_EQ(resumed.state().accuracy, a.state().accuracy);
  EXPECT_EQ(resumed.state().steps, a.state().steps);
  EXPECT_EQ(resumed.state().snapshots, a.state().snapshots);
}

INSTANTIATE_TEST_SUITE_P(Backends, ContinualRunTest,
                         ::testing::Values(BackendKind::reference, BackendKind::crossbar),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(ContinualRun, ReplayOffForgetsMoreOnSplitTasks) {
  // Class-incremental split on one head: without replay the first task's
  // classes are overwritten by later ones.
  const LabeledSet train = labeled_features(300, 12, 6, 21);
  const LabeledSet test = labeled_features(120, 12, 6, 22);
  const TaskStream s = build_split_features(train, test, 2, 3, 4);
  ContinualConfig with = small_config();
  with.hidden = 16;
  with.epochs = 3;
  with.replay.capacity_per_task = 30;
  with.replay.per_step = 2;
  ContinualConfig without = with;
  without.replay.enabled = false;
  ContinualRun a(s, with), b(s, without);
  a.run();
  b.run();
  EXPECT_EQ(b.state().buffer.occupancy(), 0u);
  EXPECT_GE(a.state().accuracy.rows.back()[0], b.state().accuracy.rows.back()[0]);
}

TEST(ContinualRun, ResumeRejectsMismatchedStream) {
  const TaskStream s = build_permuted_mnist(striped_images(10, 4, 4, 4, 1),
                                            striped_images(4, 4, 4, 4, 2), 2, 3);
  const TaskStream other = build_permuted_mnist(striped_images(10, 4, 4, 4, 1),
                                                striped_images(4, 4, 4, 4, 2), 3, 3);
  ContinualRun run(s, small_config());
  run.run(5);
  EXPECT_THROW(ContinualRun(other, small_config(), run.state()), ConsistencyError);
  ContinualConfig wider = small_config();
  wider.hidden = 13;
  EXPECT_THROW(ContinualRun(s, wider, run.state()), ConsistencyError);
}
