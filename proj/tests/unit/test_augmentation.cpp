#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <random>

#include "darl/augmentation.hpp"
#include "toy_fixtures.hpp"

using namespace darl;
using namespace darl::augmentation;
using testing::prices_from_returns;

namespace {

std::size_t synthetic_count(const std::vector<ScheduledEpisode>& s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](const auto& e) { return e.kind == EpisodeKind::kSynthetic; }));
}

PriceTable random_prices(Eigen::Index rows, Eigen::Index assets, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0003, 0.015);
  Matrix r(rows - 1, assets);
  for (auto& x : r.reshaped()) x = n(rng);
  // A crash segment so windows carry a range of labels.
  r.middleRows(rows / 2, 10).array() -= 0.03;
  return prices_from_returns(r);
}

DarlConfig tiny_config() {
  DarlConfig cfg;
  cfg.window_length = 8;
  cfg.window_stride = 4;
  cfg.diffusion.epochs = 2;
  cfg.diffusion.steps = 10;
  cfg.diffusion.hidden = {16};
  cfg.ppo.horizon = 128;
  cfg.ppo.epochs = 2;
  cfg.ppo.hidden = {16};
  cfg.total_steps = 256;
  cfg.episode_length = 32;
  cfg.plan.synthetic_fraction = 0.5;
  cfg.plan.scenarios_per_intensity = 4;
  cfg.plan.seed = 9;
  return cfg;
}

}  // namespace

TEST_CASE("schedule examples", "[augmentation]") {
  AugmentationPlan none{.synthetic_fraction = 0.0};
  const auto real = build_episode_schedule(none, 50, 60, 200, 1);
  CHECK(synthetic_count(real) == 0);
  for (const auto& e : real) {
    CHECK(e.start >= 60);
    CHECK(e.start <= 200);
  }

  AugmentationPlan all{.synthetic_fraction = 1.0, .intensities = {1.0}};
  const auto syn = build_episode_schedule(all, 40, 60, 200, 1);
  CHECK(synthetic_count(syn) == 40);
  for (const auto& e : syn) CHECK(e.intensity == 1.0);

  AugmentationPlan mix;
  const auto s = build_episode_schedule(mix, 100, 60, 200, 1);
  CHECK(synthetic_count(s) >= 29);
  CHECK(synthetic_count(s) <= 31);

  CHECK_THROWS_AS(build_episode_schedule(mix, 0, 60, 200, 1), ConfigError);
  CHECK_THROWS_AS(build_episode_schedule(mix, 10, 201, 200, 1), DataError);
  CHECK_THROWS_AS(build_episode_schedule(AugmentationPlan{.synthetic_fraction = 1.5}, 10, 60, 200, 1), ConfigError);
  CHECK_THROWS_AS(build_episode_schedule(AugmentationPlan{.intensities = {0.5, 2.0}}, 10, 60, 200, 1), ConfigError);
}

TEST_CASE("schedule composition is exact for any count", "[augmentation][property]") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> frac(0.0, 1.0);
  for (int k = 0; k < 300; ++k) {
    const std::size_t count = 1 + rng() % 300;
    const AugmentationPlan plan{.synthetic_fraction = frac(rng)};
    const auto s = build_episode_schedule(plan, count, 60, 100, rng());
    CHECK(std::abs(static_cast<double>(synthetic_count(s)) - plan.synthetic_fraction * static_cast<double>(count)) <=
          1.0);
  }
}

TEST_CASE("schedule is deterministic and draws intensities from the menu", "[augmentation]") {
  const AugmentationPlan plan{.synthetic_fraction = 0.5};
  const auto a = build_episode_schedule(plan, 8000, 60, 500, 3);
  CHECK(schedule_to_csv(a) == schedule_to_csv(build_episode_schedule(plan, 8000, 60, 500, 3)));
  CHECK(schedule_to_csv(a) != schedule_to_csv(build_episode_schedule(plan, 8000, 60, 500, 4)));
  std::map<double, int> hist;
  for (const auto& e : a)
    if (e.kind == EpisodeKind::kSynthetic) ++hist[e.intensity];
  REQUIRE(hist.size() == 4);
  for (const auto& [c, n] : hist) CHECK(std::abs(n - 1000) < 120);

  // Start rows do not depend on the mix, so the real prefix of the stream is shared.
  const auto plain = build_episode_schedule(AugmentationPlan{.synthetic_fraction = 0.0}, 8000, 60, 500, 3);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].start == plain[i].start);
}

TEST_CASE("synthetic fragments are deterministic, positive and tagged", "[augmentation]") {
  const auto d = testing::two_regime_dataset(8, 2, 4);
  const auto model = diffusion::make_model(8, 2, 10, {8}, 3);
  const Vector base = (Vector(2) << 50.0, 20.0).finished();
  const Date day(2022, 3, 4);
  const std::vector<std::string> tickers{"X", "Y"};
  const auto a = realize_synthetic_episode(model, 0.75, 42, d.stats, base, day, tickers);
  const auto b = realize_synthetic_episode(model, 0.75, 42, d.stats, base, day, tickers);
  CHECK(a.closes == b.closes);
  CHECK(a.origin == Origin::kSynthetic);
  CHECK(a.rows() == 8);
  CHECK(a.dates.front() == day.plus_days(1));
  CHECK((a.closes.array() > 0.0).all());
  CHECK_FALSE(realize_synthetic_episode(model, 0.75, 43, d.stats, base, day, tickers).closes == a.closes);

  // Wildly scaled stats still give positive prices through clipping.
  StandardizationStats wild{Vector::Constant(2, -0.3), Vector::Constant(2, 5.0)};
  for (std::uint64_t s = 0; s < 50; ++s)
    CHECK((realize_synthetic_episode(model, 1.0, s, wild, base, day, tickers).closes.array() > 0.0).all());
}

TEST_CASE("crash intensity lowers fragment returns", "[augmentation][oracle]") {
  const auto d = testing::two_regime_dataset();
  const auto model = testing::train_two_regime_model(d);
  const Vector base = Vector::Constant(2, 100.0);
  auto fragment_return = [&](double c, std::uint64_t seed) {
    const auto f = realize_synthetic_episode(model, c, seed, d.stats, base, Date(2020, 1, 1), {"A0", "A1"});
    return (f.closes.row(f.rows() - 1).transpose().array() / base.array() - 1.0).mean();
  };
  std::vector<double> crash, calm;
  for (std::uint64_t s = 0; s < 200; ++s) {
    crash.push_back(fragment_return(1.0, s));
    calm.push_back(fragment_return(0.0, 1000 + s));
  }
  CHECK(testing::describe(crash).mean < testing::describe(calm).mean);
}

TEST_CASE("splice keeps real history and appends the fragment", "[augmentation]") {
  const auto real = random_prices(120, 2, 5);
  const auto model = diffusion::make_model(8, 2, 10, {8}, 3);
  const StandardizationStats unit{Vector::Zero(2), Vector::Constant(2, 0.01)};
  const auto frag = realize_synthetic_episode(model, 0.5, 1, unit, real.closes.row(90).transpose(), real.dates[90],
                                              real.tickers);
  const auto spliced = splice_episode(real, 90, 61, frag);
  CHECK(spliced.rows() == 61 + 8);
  CHECK(spliced.origin == Origin::kSynthetic);
  CHECK(spliced.closes.topRows(61) == real.closes.middleRows(30, 61));
  CHECK(spliced.closes.bottomRows(8) == frag.closes);
  CHECK(spliced.dates[60] == real.dates[90]);
  CHECK_NOTHROW(validate(spliced));
  CHECK_THROWS_AS(splice_episode(real, 10, 61, frag), DataError);
}

TEST_CASE("ablation plan reproduces plain training bit for bit", "[augmentation]") {
  auto cfg = tiny_config();
  cfg.plan.synthetic_fraction = 0.0;
  const auto market = make_features(random_prices(200, 3, 6));
  const auto plain = train_plain_agent(market, cfg, 77);
  const auto stage = train_agent_stage(market, nullptr, cfg, 77);
  CHECK(stage.training.agent == plain.agent);
  CHECK(agent::to_json(stage.training.agent, cfg.ppo, 77).dump() == agent::to_json(plain.agent, cfg.ppo, 77).dump());
  CHECK(agent::curve_to_csv(stage.training.curve) == agent::curve_to_csv(plain.curve));
}

TEST_CASE("darl_train runs end to end and is deterministic", "[augmentation]") {
  const auto cfg = tiny_config();
  const auto prices = random_prices(300, 3, 7);
  const auto a = darl_train(prices, cfg, 5);
  const auto b = darl_train(prices, cfg, 5);
  CHECK(diffusion::to_json(a.diffusion.model).dump() == diffusion::to_json(b.diffusion.model).dump());
  CHECK(a.agent.training.agent == b.agent.training.agent);
  CHECK(a.agent.training.curve.size() == 2);
  CHECK(a.diffusion.model.meta.seed == derive_seed(5, 51));
  CHECK(a.diffusion.model.meta.dataset_hash == diffusion::dataset_hash(a.diffusion.dataset.samples));
  // Synthetic episodes were actually consumed.
  std::size_t used_synthetic = 0;
  for (std::size_t i = 0; i < a.agent.training.episodes_used; ++i)
    if (a.agent.schedule[i].kind == EpisodeKind::kSynthetic) ++used_synthetic;
  CHECK(used_synthetic > 0);

  const auto c = darl_train(prices, cfg, 6);
  CHECK_FALSE(c.agent.training.agent == a.agent.training.agent);
}

TEST_CASE("synthetic data never reaches training bases or backtests", "[augmentation]") {
  auto cfg = tiny_config();
  auto synthetic = random_prices(300, 3, 8);
  synthetic.origin = Origin::kSynthetic;
  CHECK_THROWS_AS(train_diffusion_stage(synthetic, cfg, 1), LeakError);
  CHECK_THROWS_AS(train_agent_stage(make_features(synthetic), nullptr, cfg, 1), LeakError);

  const auto market = make_features(random_prices(300, 3, 8));
  CHECK_THROWS_AS(train_agent_stage(market, nullptr, cfg, 1), MissingPrerequisite);
  const auto wrong = diffusion::make_model(8, 2, 10, {8}, 1);
  CHECK_THROWS_AS(train_agent_stage(market, &wrong, cfg, 1), DataError);
}

TEST_CASE("plan JSON round trip", "[augmentation]") {
  const AugmentationPlan p{.synthetic_fraction = 0.4, .intensities = {0.5, 1.0}, .scenarios_per_intensity = 8, .seed = 3};
  const nlohmann::json j = p;
  const auto q = j.get<AugmentationPlan>();
  CHECK(q.synthetic_fraction == 0.4);
  CHECK(q.intensities == p.intensities);
  CHECK(q.scenarios_per_intensity == 8);
  CHECK(q.seed == 3);
  CHECK(j.at("base_price_policy") == "last_real_close_of_random_start");
}
