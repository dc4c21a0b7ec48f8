#include <gtest/gtest.h>

#include <random>

#include "goalfactor/evalharness.hpp"
#include "synthetic.hpp"

namespace gf = goalfactor;

namespace {

gf::LabeledRepresentation rep(std::string id, std::vector<double> v, std::vector<std::string> gold = {},
                              std::map<std::string, std::string> labels = {}) {
  return {std::move(id), std::move(v), std::move(gold), std::move(labels)};
}

std::vector<gf::LabeledRepresentation> random_reps(std::size_t n, std::size_t dim, std::size_t items,
                                                   std::mt19937_64& rng, const std::string& prefix) {
  std::normal_distribution<double> normal;
  std::vector<gf::LabeledRepresentation> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(dim);
    for (auto& x : v) x = normal(rng);
    std::vector<std::string> gold = {"item" + std::to_string(rng() % items)};
    if (rng() % 3 == 0) gold.push_back("item" + std::to_string(rng() % items));
    out.push_back(rep(prefix + std::to_string(i), v, gold, {{"c", "class" + std::to_string(rng() % 3)}}));
  }
  return out;
}

Eigen::MatrixXd random_rotation(Eigen::Index dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd a(dim, dim);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ();
}

std::vector<gf::LabeledRepresentation> transform(std::vector<gf::LabeledRepresentation> reps, const Eigen::MatrixXd& q) {
  for (auto& r : reps) {
    Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(r.vector.data(), static_cast<Eigen::Index>(r.vector.size()));
    const Eigen::VectorXd w = q * v;
    r.vector.assign(w.data(), w.data() + w.size());
  }
  return reps;
}

/// Separable probe data: class k has feature 0 in [k, k + 0.5].
std::vector<gf::LabeledRepresentation> separable(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 0.5);
  std::normal_distribution<double> normal;
  std::vector<gf::LabeledRepresentation> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = i % classes;
    out.push_back(rep("p" + std::to_string(i), {static_cast<double>(k) + u(rng), normal(rng), normal(rng)}, {},
                      {{"topic", "t" + std::to_string(k)}}));
  }
  return out;
}

}  // namespace

TEST(HitAtK, ExactMatchWithUniqueGold) {
  std::vector<gf::LabeledRepresentation> train = {rep("a", {1, 0}, {"X"}), rep("b", {0, 1}, {"Y"})};
  std::vector<gf::LabeledRepresentation> test = {rep("t", {1, 0}, {"X"})};
  EXPECT_EQ(gf::hit_at_k_recommendation(train, test, 1, {1}).metrics.at("hit@1"), 100.0);
}

TEST(HitAtK, ToyFrequencyRanking) {
  std::vector<gf::LabeledRepresentation> train = {rep("a", {1, 0}, {"A"}), rep("b", {1, 0.1}, {"A"}), rep("c", {1, 0.2}, {"B"})};
  std::vector<gf::LabeledRepresentation> test = {rep("t", {1, 0.05}, {"B"})};
  const auto r = gf::hit_at_k_recommendation(train, test, 3, {1, 2});
  EXPECT_EQ(r.metrics.at("hit@1"), 0.0);
  EXPECT_EQ(r.metrics.at("hit@2"), 100.0);
  EXPECT_EQ(gf::detail::rank_by_frequency({&train[0].gold_items, &train[1].gold_items, &train[2].gold_items}),
            (std::vector<std::string>{"A", "B"}));
}

TEST(HitAtK, FrequencyTiesKeepNeighbourOrder) {
  // Nearest neighbour first: its item wins the tie.
  std::vector<gf::LabeledRepresentation> train = {rep("far", {0, 1}, {"Far"}), rep("near", {1, 0}, {"Near"})};
  std::vector<gf::LabeledRepresentation> test = {rep("t", {1, 0.1}, {"Near"})};
  EXPECT_EQ(gf::hit_at_k_recommendation(train, test, 2, {1}).metrics.at("hit@1"), 100.0);
}

TEST(HitAtK, DistanceTiesBrokenByDocId) {
  std::vector<gf::LabeledRepresentation> train = {rep("z", {1, 0}, {"Z"}), rep("a", {2, 0}, {"A"})};
  std::vector<gf::LabeledRepresentation> test = {rep("t", {3, 0}, {"A"})};
  EXPECT_EQ(gf::hit_at_k_recommendation(train, test, 1, {1}).metrics.at("hit@1"), 100.0);
  test[0].gold_items = {"Z"};
  EXPECT_EQ(gf::hit_at_k_recommendation(train, test, 1, {1}).metrics.at("hit@1"), 0.0);
}

TEST(HitAtK, MonotoneInKAndBounded) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto train = random_reps(80, 5, 15, rng, "tr");
    const auto test = random_reps(40, 5, 15, rng, "te");
    const std::vector<std::size_t> ks = {1, 2, 3, 5, 10, 20, 50};
    const auto r = gf::hit_at_k_recommendation(train, test, 1 + seed * 3, ks);
    double prev = 0;
    for (auto k : ks) {
      const double v = r.metrics.at("hit@" + std::to_string(k));
      EXPECT_GE(v, prev);
      EXPECT_LE(v, 100.0);
      prev = v;
    }
  }
}

TEST(HitAtK, ZeroVectorTreatedAsZeroSimilarity) {
  gf::set_log_level(gf::LogLevel::kOff);
  std::vector<gf::LabeledRepresentation> train = {rep("a", {0, 0}, {"A"}), rep("b", {-1, 0}, {"B"})};
  std::vector<gf::LabeledRepresentation> test = {rep("t", {1, 0}, {"A"})};
  // b has cosine -1, a has 0: a is nearer.
  EXPECT_EQ(gf::hit_at_k_recommendation(train, test, 1, {1}).metrics.at("hit@1"), 100.0);
  gf::set_log_level(gf::LogLevel::kInfo);
}

TEST(HitAtK, Preconditions) {
  std::vector<gf::LabeledRepresentation> train = {rep("a", {1, 0}, {"A"})};
  EXPECT_THROW(gf::hit_at_k_recommendation(train, {rep("t", {1, 0})}), gf::Error);
  EXPECT_THROW(gf::hit_at_k_recommendation({}, {rep("t", {1, 0}, {"A"})}), gf::Error);
  EXPECT_THROW(gf::hit_at_k_recommendation(train, {rep("t", {1, 0, 0}, {"A"})}), gf::Error);
}

// ---------------------------------------------------------------------------

TEST(NextAction, SelfMatchAndBruteForceNearest) {
  std::vector<gf::LabeledRepresentation> train = {rep("a", {1, 0}, {"go"}), rep("b", {0, 1}, {"take"})};
  EXPECT_EQ(gf::next_action_accuracy(train, {rep("t", {0, 1}, {"take"})}).metrics.at("accuracy"), 100.0);
  // cosine 0.9 with "go", 0.1 with "take"
  const double s9 = std::sqrt(1 - 0.81), s1 = std::sqrt(1 - 0.01);
  train = {rep("a", {0.9, s9}, {"go"}), rep("b", {0.1, s1}, {"take"})};
  EXPECT_EQ(gf::next_action_accuracy(train, {rep("t", {1, 0}, {"go"})}).metrics.at("accuracy"), 100.0);
  EXPECT_EQ(gf::next_action_accuracy(train, {rep("t", {1, 0}, {"take"})}).metrics.at("accuracy"), 0.0);
}

TEST(NextAction, InvariantToTrainOrderAndScaling) {
  std::mt19937_64 rng(3);
  auto train = random_reps(60, 4, 6, rng, "tr");
  auto test = random_reps(50, 4, 6, rng, "te");
  for (auto* set : {&train, &test})
    for (auto& r : *set) r.gold_items.resize(1);
  const double base = gf::next_action_accuracy(train, test).metrics.at("accuracy");
  std::shuffle(train.begin(), train.end(), rng);
  EXPECT_EQ(gf::next_action_accuracy(train, test).metrics.at("accuracy"), base);
  auto scaled = train;
  for (auto& r : scaled)
    for (auto& x : r.vector) x *= 3.5;
  EXPECT_EQ(gf::next_action_accuracy(scaled, test).metrics.at("accuracy"), base);
  EXPECT_EQ(gf::next_action_accuracy(train, test, gf::Similarity::kCosine, 4).metrics.at("accuracy"), base);
}

TEST(NextAction, Preconditions) {
  EXPECT_THROW(gf::next_action_accuracy({}, {rep("t", {1}, {"go"})}), gf::Error);
  EXPECT_THROW(gf::next_action_accuracy({rep("a", {1}, {"go", "take"})}, {rep("t", {1}, {"go"})}), gf::Error);
}

// ---------------------------------------------------------------------------

TEST(Probe, SeparableFeatureGivesFullScore) {
  std::mt19937_64 rng(1);
  const auto reps = separable(100, 2, rng);
  EXPECT_EQ(gf::decision_tree_probe(reps, "topic").metrics.at("balanced_accuracy"), 100.0);
}

TEST(Probe, PermutedLabelsNearChance) {
  const std::size_t classes = 4;
  double mean = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    auto reps = separable(1000, classes, rng);
    std::vector<std::string> labels;
    for (const auto& r : reps) labels.push_back(r.labels.at("topic"));
    std::shuffle(labels.begin(), labels.end(), rng);
    for (std::size_t i = 0; i < reps.size(); ++i) reps[i].labels["topic"] = labels[i];
    const double v = gf::decision_tree_probe(reps, "topic", 5, seed).metrics.at("balanced_accuracy");
    EXPECT_NEAR(v, 100.0 / classes, 5.0) << "seed " << seed;
    mean += v / 10;
  }
  EXPECT_NEAR(mean, 25.0, 2.5);
}

TEST(Probe, DuplicatedSamplesLeaveSeparableScoreUnchanged) {
  std::mt19937_64 rng(2);
  const auto reps = separable(60, 3, rng);
  auto doubled = reps;
  for (const auto& r : reps) {
    doubled.push_back(r);
    doubled.back().doc_id += "-copy";
  }
  EXPECT_EQ(gf::decision_tree_probe(reps, "topic").metrics.at("balanced_accuracy"),
            gf::decision_tree_probe(doubled, "topic").metrics.at("balanced_accuracy"));
}

TEST(Probe, DeterministicAndThreadFree) {
  std::mt19937_64 rng(5);
  auto reps = random_reps(200, 4, 3, rng, "r");
  const auto a = gf::decision_tree_probe(reps, "c", 5, 17);
  const auto b = gf::decision_tree_probe(reps, "c", 5, 17, {}, 4);
  EXPECT_EQ(a.metrics, b.metrics);
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.config["max_depth"], 20);
  EXPECT_EQ(a.config["min_samples_leaf"], 2);
}

TEST(Probe, ConstantAndSparseLabelsRejected) {
  gf::set_log_level(gf::LogLevel::kOff);
  std::vector<gf::LabeledRepresentation> reps;
  for (int i = 0; i < 20; ++i) reps.push_back(rep("r" + std::to_string(i), {double(i)}, {}, {{"l", "same"}}));
  EXPECT_THROW(gf::decision_tree_probe(reps, "l"), gf::Error);
  // A class below the fold count is dropped; two classes remain.
  reps[0].labels["l"] = "rare";
  for (int i = 10; i < 20; ++i) {
    reps[i].labels["l"] = "other";
    reps[i].vector[0] += 100;
  }
  reps.push_back(rep("unlabeled", {0.0}));
  EXPECT_EQ(gf::decision_tree_probe(reps, "l").metrics.at("balanced_accuracy"), 100.0);
  gf::set_log_level(gf::LogLevel::kInfo);
}

TEST(BalancedAccuracy, MeanOfPerClassRecall) {
  EXPECT_NEAR(gf::balanced_accuracy({0, 0, 0, 1}, {0, 0, 1, 1}, 2), 100.0 * (2.0 / 3 + 1.0) / 2, 1e-12);
  EXPECT_EQ(gf::balanced_accuracy({0, 1, 2}, {0, 1, 2}, 3), 100.0);
}

TEST(Cart, FitsXorWithDepth) {
  std::vector<std::vector<double>> x;
  std::vector<std::size_t> y;
  for (int rep = 0; rep < 4; ++rep)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        x.push_back({double(a), double(b)});
        y.push_back(static_cast<std::size_t>(a ^ b));
      }
  gf::CartClassifier tree;
  tree.fit(x, y, 2);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(tree.predict(x[i]), y[i]);
  gf::CartClassifier stump({1, 2});
  stump.fit(x, y, 2);
  EXPECT_LE(stump.node_count(), 3u);
}

// ---------------------------------------------------------------------------

TEST(Invariance, GlobalRotationLeavesAllMetricsUnchanged) {
  std::mt19937_64 rng(7);
  const auto train = random_reps(120, 6, 10, rng, "tr");
  const auto test = random_reps(60, 6, 10, rng, "te");
  const auto q = random_rotation(6, 3);
  const auto train_r = transform(train, q), test_r = transform(test, q);
  EXPECT_EQ(gf::hit_at_k_recommendation(train, test, 20, {1, 5, 20}).metrics,
            gf::hit_at_k_recommendation(train_r, test_r, 20, {1, 5, 20}).metrics);
  auto single = [](std::vector<gf::LabeledRepresentation> v) {
    for (auto& r : v) r.gold_items.resize(1);
    return v;
  };
  EXPECT_EQ(gf::next_action_accuracy(single(train), single(test)).metrics,
            gf::next_action_accuracy(single(train_r), single(test_r)).metrics);
  // Rotation moves axis-aligned splits; on separable data the score stays 100.
  std::mt19937_64 rng2(8);
  auto sep = separable(200, 2, rng2);
  for (auto& r : sep) r.vector[0] *= 10;
  EXPECT_EQ(gf::decision_tree_probe(transform(sep, random_rotation(3, 4)), "topic").metrics.at("balanced_accuracy"), 100.0);
}

// ---------------------------------------------------------------------------

TEST(Majority, NextActionEqualsTestShareOfTopTrainAction) {
  std::vector<gf::LabeledRepresentation> train, test;
  for (int i = 0; i < 10; ++i) train.push_back(rep("tr" + std::to_string(i), {1}, {i < 6 ? "A" : "B"}));
  const std::vector<std::string> test_actions = {"A", "B", "A", "C", "A"};
  for (std::size_t i = 0; i < test_actions.size(); ++i) test.push_back(rep("te" + std::to_string(i), {1}, {test_actions[i]}));
  EXPECT_DOUBLE_EQ(gf::majority_baseline(train, test, gf::EvalTask::kNextAction).metrics.at("accuracy"), 60.0);
}

TEST(Majority, HitAtOneEqualsCountOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto train = random_reps(300, 2, 12, rng, "tr");
    const auto test = random_reps(150, 2, 12, rng, "te");
    std::map<std::string, int> counts;
    for (const auto& r : train)
      for (const auto& g : r.gold_items) ++counts[g];
    std::string top;
    int best = -1;
    // Ties go to the item seen first in train order.
    std::vector<std::string> order;
    for (const auto& r : train)
      for (const auto& g : r.gold_items)
        if (std::find(order.begin(), order.end(), g) == order.end()) order.push_back(g);
    for (const auto& g : order)
      if (counts[g] > best) {
        best = counts[g];
        top = g;
      }
    double hits = 0;
    for (const auto& r : test) hits += std::find(r.gold_items.begin(), r.gold_items.end(), top) != r.gold_items.end();
    const auto result = gf::majority_baseline(train, test, gf::EvalTask::kRecommendation, {1, 5});
    EXPECT_DOUBLE_EQ(result.metrics.at("hit@1"), 100.0 * hits / 150.0);
    EXPECT_GE(result.metrics.at("hit@5"), result.metrics.at("hit@1"));
  }
}

TEST(Majority, ProbePredictsTopLabel) {
  std::vector<gf::LabeledRepresentation> train, test;
  for (int i = 0; i < 9; ++i) train.push_back(rep("tr" + std::to_string(i), {1}, {}, {{"l", i < 5 ? "x" : "y"}}));
  for (int i = 0; i < 4; ++i) test.push_back(rep("te" + std::to_string(i), {1}, {}, {{"l", i < 1 ? "x" : "y"}}));
  // Only class x is ever predicted: recalls 1 and 0.
  EXPECT_DOUBLE_EQ(gf::majority_baseline(train, test, gf::EvalTask::kProbe, {}, "l").metrics.at("balanced_accuracy"), 50.0);
}

TEST(EvalResult, JsonShape) {
  std::vector<gf::LabeledRepresentation> train = {rep("a", {1, 0}, {"X"})};
  const auto j = gf::hit_at_k_recommendation(train, {rep("t", {1, 0}, {"X"})}, 20, {1, 5}).to_json();
  EXPECT_EQ(j["task"], "rec");
  EXPECT_EQ(j["metrics"]["hit@5"], 100.0);
  EXPECT_EQ(j["config"]["n_neighbors"], 20);
  EXPECT_EQ(j["config"]["similarity"], "cosine");
}
