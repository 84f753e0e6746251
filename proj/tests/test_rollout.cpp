#include <catch2/catch.hpp>
#include <cmath>
#include <set>

#include "planforge/rollout.hpp"

using namespace planforge;

namespace {

GridSpec small_grid() {
  GridSpec g;
  g.nx = 32;
  g.ny = 32;
  return g;
}

Environment small_env(std::uint64_t seed) {
  return Environment::make(generate_case(seed, small_grid(), "tiny"));
}

Policy policy_for(const Environment& env, std::uint64_t seed) {
  AgentNetConfig nc;
  nc.state_dim = env.state_dim();
  nc.n_agents = env.n_agents();
  nc.trunk_dim = 16;
  nc.hidden_dim = 8;
  MixerConfig mc;
  mc.state_dim = env.state_dim();
  mc.n_agents = env.n_agents();
  mc.embed_dim = 4;
  Rng rng(seed);
  return Policy::init(nc, mc, rng);
}

// A minimal self-consistent record for bank plumbing tests (no solves).
EpisodeRecord stub_record(std::uint64_t seed, int horizon, int n_agents) {
  EpisodeRecord rec;
  rec.case_id = "stub";
  rec.seed = seed;
  Rng rng(seed);
  for (int t = 0; t <= horizon; ++t) {
    Matrix s(2, 3);
    for (Index i = 0; i < s.size(); ++i)
      s.data()[i] = rng.uniform(0.0, 1.0);
    rec.states.push_back(s);
    ScoreBreakdown sb;
    sb.total = rng.uniform(0.0, 10.0);
    sb.max_total = 10.0;
    rec.scores.push_back(sb);
    rec.tuner.push_back(TunerState::initial(n_agents));
    rec.parameters.push_back(Vector::Zero(n_agents));
  }
  rec.rewards = Vector(horizon);
  for (int t = 0; t < horizon; ++t) {
    IntVector a(n_agents);
    for (Index i = 0; i < a.size(); ++i)
      a[i] = static_cast<int>(rng.uniform_int(3)) - 1;
    rec.actions.push_back(a);
    rec.rewards[t] = reward(rec.scores[static_cast<size_t>(t) + 1].total, 10.0);
  }
  rec.episode_return = rec.rewards.sum();
  for (const auto& sb : rec.scores)
    rec.best_relative = std::max(rec.best_relative, sb.relative());
  return rec;
}

}  // namespace

TEST_CASE("environment bundles registry and scoring to match the case") {
  const Environment tiny = small_env(3);
  CHECK(tiny.n_agents() == 4);  // reduced registry: CTV uniform + one OAR max
  CHECK(tiny.state_dim() == 2 * kDvhBins);
  CHECK(tiny.scoring.rules.size() == 5);

  const Environment hnc =
      Environment::make(generate_case(4, GridSpec{}, "hnc"));
  CHECK(hnc.n_agents() == 45);
  CHECK(hnc.state_dim() == 19 * kDvhBins);
  CHECK(hnc.scoring.rules.size() == 25);

  // Explicit override forces the reduced registry on the full layout.
  const Environment hnc_reduced = Environment::make(
      generate_case(4, GridSpec{}, "hnc"), SolverOptions{}, RegistryMode::Reduced);
  CHECK(hnc_reduced.n_agents() == 2 + 2 * 18);
}

TEST_CASE("an episode records ten transitions and consistent summaries") {
  const Environment env = small_env(11);
  const Policy policy = policy_for(env, 1);
  const EpisodeRecord rec = run_episode(env, policy, 0.5, 42);

  REQUIRE_FALSE(rec.failed);
  CHECK(rec.horizon() == kEpisodeHorizon);
  CHECK(rec.states.size() == 11);
  CHECK(rec.scores.size() == 11);
  CHECK(rec.tuner.size() == 11);
  CHECK(rec.parameters.size() == 11);
  CHECK(rec.rewards.size() == 10);
  CHECK(rec.case_id == env.plan_case.id);
  CHECK(rec.seed == 42);
  CHECK_NOTHROW(rec.validate());

  // Rewards are exactly the centered next-state scores.
  for (int t = 0; t < rec.horizon(); ++t)
    CHECK(rec.rewards[t] ==
          Approx(rec.scores[static_cast<size_t>(t) + 1].total -
                 0.5 * env.scoring.max_total()));

  // Tuner snapshots move by at most one notch per step.
  for (size_t t = 1; t < rec.tuner.size(); ++t)
    for (Index i = 0; i < rec.tuner[t].x.size(); ++i)
      CHECK(std::abs(rec.tuner[t].x[i] - rec.tuner[t - 1].x[i]) <= 1);

  // Corrupting a reward is caught by validation.
  EpisodeRecord bad = rec;
  bad.rewards[0] += 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("a stay-still policy keeps the parameters frozen") {
  const Environment env = small_env(12);
  Policy policy = policy_for(env, 2);
  for (auto& t : policy.net.params.tensors) t.data.setZero();
  // Biasing the middle advantage makes "stay" the greedy action everywhere.
  policy.net.params.at(policy.net.params.index_of("agent.adv.b")).data[1] = 1.0;

  const EpisodeRecord rec = run_episode(env, policy, 0.0, 7, 4);
  REQUIRE_FALSE(rec.failed);
  for (const ActionVector& a : rec.actions)
    for (Index i = 0; i < a.size(); ++i) CHECK(a[i] == 0);
  for (const Vector& p : rec.parameters) CHECK(p == rec.parameters.front());
  for (const TunerState& x : rec.tuner) CHECK(x.x.isZero());
}

TEST_CASE("episodes are bit-identical for identical inputs") {
  const Environment env = small_env(13);
  const Policy policy = policy_for(env, 3);
  const EpisodeRecord a = run_episode(env, policy, 0.7, 99, 5);
  const EpisodeRecord b = run_episode(env, policy, 0.7, 99, 5);

  REQUIRE_FALSE(a.failed);
  CHECK(a.rewards == b.rewards);
  CHECK(a.episode_return == b.episode_return);
  CHECK(a.best_relative == b.best_relative);
  for (size_t t = 0; t < a.states.size(); ++t)
    CHECK(a.states[t] == b.states[t]);
  for (size_t t = 0; t < a.actions.size(); ++t)
    CHECK(a.actions[t] == b.actions[t]);

  // A different seed changes the trace under exploration.
  const EpisodeRecord c = run_episode(env, policy, 0.7, 100, 5);
  bool any_difference = false;
  for (size_t t = 0; t < a.actions.size() && !any_difference; ++t)
    any_difference = (a.actions[t] != c.actions[t]);
  CHECK(any_difference);
}

TEST_CASE("solver blowups mark the episode failed instead of throwing") {
  Environment env = small_env(14);
  env.plan_case.influence *= 1e200;  // objectives overflow on the first step
  const Policy policy = policy_for(env, 4);
  const EpisodeRecord rec = run_episode(env, policy, 0.5, 21, 3);
  CHECK(rec.failed);
  CHECK_FALSE(rec.failure_reason.empty());
  CHECK_THROWS_AS(rec.validate(3), ConfigError);

  DataBank bank(10);
  CHECK_THROWS_AS(bank.push(rec), ConfigError);
  CHECK(bank.size() == 0);
}

TEST_CASE("data bank evicts oldest-first at capacity") {
  DataBank bank(3);
  for (std::uint64_t s = 0; s < 5; ++s) bank.push(stub_record(s, 2, 2));
  CHECK(bank.size() == 3);
  CHECK(bank.total_pushed() == 5);
  CHECK(bank.at(0).seed == 2);  // 0 and 1 evicted
  CHECK(bank.at(1).seed == 3);
  CHECK(bank.at(2).seed == 4);
  CHECK_THROWS_AS(bank.at(3), ConfigError);
  CHECK_THROWS_AS(DataBank(0), ConfigError);
}

TEST_CASE("collection rounds are worker-count invariant") {
  const std::vector<Environment> cases{small_env(15), small_env(16)};
  const Policy policy = policy_for(cases[0], 5);
  Hyper hyper;

  // One round with two workers.
  WorkerPool two{2};
  DataBank bank_two(50);
  const auto parallel =
      collect_round(two, cases, policy, hyper, 77, 0, bank_two, 3);

  // Two rounds with one worker covering the same global indices.
  WorkerPool one{1};
  DataBank bank_one(50);
  auto serial = collect_round(one, cases, policy, hyper, 77, 0, bank_one, 3);
  const auto second = collect_round(one, cases, policy, hyper, 77, 1, bank_one, 3);
  serial.insert(serial.end(), second.begin(), second.end());

  REQUIRE(parallel.size() == 2);
  REQUIRE(serial.size() == 2);
  for (size_t i = 0; i < parallel.size(); ++i) {
    CHECK(parallel[i].seed == serial[i].seed);
    CHECK(parallel[i].case_id == serial[i].case_id);
    CHECK(parallel[i].rewards == serial[i].rewards);
    for (size_t t = 0; t < parallel[i].actions.size(); ++t)
      CHECK(parallel[i].actions[t] == serial[i].actions[t]);
  }
  CHECK(bank_two.size() == 2);
  CHECK(bank_one.size() == 2);
}

TEST_CASE("rounds assign cases round-robin and epsilon by global index") {
  const std::vector<Environment> cases{small_env(17), small_env(18)};
  const Policy policy = policy_for(cases[0], 6);
  Hyper hyper;
  WorkerPool pool{3};
  DataBank bank(50);

  // Global indices 4, 5, 6: cases 0, 1, 0; epsilon crosses a decay boundary.
  const auto records = collect_round(pool, cases, policy, hyper, 9, 4, bank, 2);
  REQUIRE(records.size() == 3);
  CHECK(records[0].case_id == cases[0].plan_case.id);
  CHECK(records[1].case_id == cases[1].plan_case.id);
  CHECK(records[2].case_id == cases[0].plan_case.id);
  CHECK(records[0].epsilon == Approx(0.9));
  CHECK(records[1].epsilon == Approx(0.81));
  CHECK(records[2].epsilon == Approx(0.81));
  for (size_t i = 0; i < records.size(); ++i)
    CHECK(records[i].seed == derive_seed(9, 4 + i));
}

TEST_CASE("a crashing case fails its episode but the round completes") {
  Environment good = small_env(19);
  Environment bad = small_env(20);
  bad.plan_case.influence *= 1e200;
  const std::vector<Environment> cases{good, bad};
  const Policy policy = policy_for(good, 7);
  Hyper hyper;
  WorkerPool pool{2};
  DataBank bank(50);

  const auto records = collect_round(pool, cases, policy, hyper, 5, 0, bank, 2);
  REQUIRE(records.size() == 2);
  CHECK_FALSE(records[0].failed);
  CHECK(records[1].failed);
  CHECK(bank.size() == 1);
  CHECK(bank.at(0).seed == records[0].seed);
}

TEST_CASE("batch sampling is uniform, distinct, and whole-episode") {
  DataBank bank(20);
  for (std::uint64_t s = 0; s < 10; ++s) bank.push(stub_record(s, 3, 2));

  // B = size gives a permutation of the whole bank.
  Rng rng(1);
  const TDBatch all = sample_batch(bank, 10, rng);
  std::multiset<double> returns_seen;
  for (const TDEpisode& e : all.episodes) {
    CHECK(e.horizon() == 3);
    returns_seen.insert(e.rewards.sum());
  }
  std::multiset<double> returns_bank;
  for (size_t i = 0; i < bank.size(); ++i)
    returns_bank.insert(bank.at(i).rewards.sum());
  CHECK(returns_seen == returns_bank);

  // Sampled episodes are distinct within a batch.
  for (int trial = 0; trial < 50; ++trial) {
    const TDBatch b = sample_batch(bank, 4, rng);
    std::set<double> distinct;
    for (const TDEpisode& e : b.episodes) distinct.insert(e.rewards.sum());
    CHECK(distinct.size() == 4);
  }

  // Long-run frequency of each episode approaches B / size.
  const int trials = 3000;
  std::map<double, int> hits;
  for (size_t i = 0; i < bank.size(); ++i)
    hits[bank.at(i).rewards.sum()] = 0;
  for (int trial = 0; trial < trials; ++trial) {
    const TDBatch b = sample_batch(bank, 3, rng);
    for (const TDEpisode& e : b.episodes) hits[e.rewards.sum()] += 1;
  }
  const double expect = 3.0 / 10.0;
  const double sigma = std::sqrt(expect * (1.0 - expect) / trials);
  for (const auto& [key, count] : hits)
    CHECK(std::abs(count / static_cast<double>(trials) - expect) <=
          3.0 * sigma);

  CHECK_THROWS_AS(sample_batch(bank, 11, rng), ConfigError);
  CHECK_THROWS_AS(sample_batch(bank, 0, rng), ConfigError);
}

TEST_CASE("records convert to learner episodes") {
  const EpisodeRecord rec = stub_record(8, 3, 2);
  const TDEpisode td = rec.to_td();
  CHECK(td.horizon() == 3);
  REQUIRE(td.states.size() == 4);
  CHECK(td.states[0] == state_features(rec.states[0]));
  CHECK(td.rewards == rec.rewards);
  CHECK_NOTHROW(td.validate(2, 6));
}
