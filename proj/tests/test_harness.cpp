#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "driftopt/harness.hpp"
#include "driftopt/io.hpp"

using namespace driftopt;

namespace {

ExperimentConfig small_config() {
    ExperimentConfig cfg;
    cfg.env.horizon = 1500;
    cfg.env.change_period = 250;
    cfg.seeds = {1, 2};
    cfg.k_values = {2};
    cfg.train.steps = 120;
    cfg.detector_window = 100;
    cfg.em.restarts = 2;
    cfg.em.max_iters = 12;
    cfg.threads = 1;
    return cfg;
}

}  // namespace

TEST_CASE("logged data round-trips through the line format") {
    LoggedData data;
    data.push_back({0, Context::tabular(0), 2, 0.123456789012345, 0.25});
    data.push_back({1, Context::vec({0.5, -1.25}), 0, -0.75, 0.5});
    std::ostringstream os;
    io::write_logged_data(os, data);

    // field order: t, context, action, reward, propensity; 1-based on disk
    REQUIRE(os.str().substr(0, 2) == "1,");
    std::istringstream is(os.str());
    const LoggedData back = io::read_logged_data(is);
    REQUIRE(back.size() == 2);
    REQUIRE(back[0].t == 0);
    REQUIRE(back[0].action == 2);
    REQUIRE(back[0].reward == data[0].reward);
    REQUIRE(back[0].propensity == 0.25);
    REQUIRE(back[1].context.dense == std::vector<double>{0.5, -1.25});
}

TEST_CASE("policies, bundles, labels, hmm parameters, and environments round-trip") {
    const FeatureMap map = FeatureMap::tabular(2, 3);
    const SoftmaxPolicy policy(map, {0.1, -0.5, 0.25, 0.0, 1.5, -2.0});
    const SoftmaxPolicy back = io::policy_from_json(io::to_json(policy));
    REQUIRE(back.theta() == policy.theta());
    REQUIRE(back.feature_map() == map);

    PolicyBundle bundle;
    bundle.sub_policies = {policy, SoftmaxPolicy::uniform(map)};
    bundle.objective_curves.assign(2, {});
    const PolicyBundle bundle_back = io::bundle_from_json(io::to_json(bundle));
    REQUIRE(bundle_back.num_states() == 2);
    REQUIRE(bundle_back.sub_policies[0].theta() == policy.theta());

    const LatentSequence labels({0, 0, 1, 2, 2, 1}, 3);
    std::ostringstream ls;
    io::write_labels(ls, labels);
    std::istringstream lback(ls.str());
    REQUIRE(io::read_labels(lback) == labels);

    HmmParams hmm;
    hmm.map = map;
    hmm.p0 = {0.25, 0.75};
    hmm.transition = {0.9, 0.1, 0.2, 0.8};
    hmm.beta = {{0, 0, 0, 0, 0, 0}, {1, 2, 3, 4, 5, 6}};
    hmm.sigma = 0.45;
    const HmmParams hmm_back = io::hmm_from_json(io::to_json(hmm));
    REQUIRE(hmm_back.p0 == hmm.p0);
    REQUIRE(hmm_back.transition == hmm.transition);
    REQUIRE(hmm_back.beta == hmm.beta);
    REQUIRE(hmm_back.sigma == hmm.sigma);

    SyntheticEnvConfig env_cfg;
    env_cfg.horizon = 120;
    env_cfg.change_period = 30;
    SplitRng rng(5);
    const EnvSpec env = generate_synthetic_env(env_cfg, rng);
    const EnvSpec env_back = io::env_from_json(io::to_json(env));
    REQUIRE(env_back.mean_reward == env.mean_reward);
    REQUIRE(env_back.schedule == env.schedule);
    REQUIRE(env_back.logging_policy.theta() == env.logging_policy.theta());
    REQUIRE(env_back.noise_sigma == env.noise_sigma);
}

TEST_CASE("dense contexts round-trip through the bracketed vector form") {
    const Context x = Context::vec({1.5, -0.25, 0.0});
    REQUIRE(io::context_from_string(io::context_to_string(x)).dense == x.dense);
    REQUIRE(io::context_from_string("7").id == 6);
}

TEST_CASE("the default experiment runs the published method roster") {
    ExperimentConfig cfg;
    REQUIRE(cfg.methods == std::vector<std::string>{"ips", "dr", "poem", "k-cd", "k-hmm"});
    REQUIRE(cfg.env.num_actions == 5);
    REQUIRE(cfg.env.num_states == 5);
    REQUIRE(cfg.env.horizon == 100000);
    REQUIRE(cfg.env.noise_sigma == 0.5);
    REQUIRE(cfg.env.change_period == 10000);
    REQUIRE(cfg.detector_window == 4000);
    REQUIRE(cfg.seeds.size() == 10);
}

TEST_CASE("a small experiment produces one row per seed and task, deterministically") {
    const ExperimentConfig cfg = small_config();
    const ExperimentReport a = run_experiment(cfg);
    const ExperimentReport b = run_experiment(cfg);

    // 3 baselines + k-cd + k-hmm at one k, over 2 seeds
    REQUIRE(a.rows.size() == 10);
    REQUIRE(a.all_succeeded);
    REQUIRE(rows_csv(a.rows) == rows_csv(b.rows));
    REQUIRE(aggregate_csv(aggregate_rows(a.rows)) == aggregate_csv(aggregate_rows(b.rows)));

    // every method row stays within the environment's reward range
    for (const auto& seed : cfg.seeds) {
        SplitRng root(seed);
        SplitRng env_rng = root.child(hash_key("env"));
        const EnvSpec env = generate_synthetic_env(cfg.env, env_rng);
        for (const auto& row : a.rows) {
            if (row.seed != seed) continue;
            REQUIRE(row.mean_reward >= env.min_mu() - 1e-9);
            REQUIRE(row.mean_reward <= env.max_mu() + 1e-9);
        }
    }
}

TEST_CASE("single-method experiment rerun is byte-identical") {
    ExperimentConfig cfg = small_config();
    cfg.methods = {"ips"};
    cfg.seeds = {1};
    const std::string a = rows_csv(run_experiment(cfg).rows);
    const std::string b = rows_csv(run_experiment(cfg).rows);
    REQUIRE(a == b);
    REQUIRE(a.substr(0, a.find('\n')) == "method,k,seed,mean_reward,regret,failed");
}

TEST_CASE("aggregation uses the population standard deviation") {
    std::vector<ReportRow> rows;
    rows.push_back({"ips", 0, 1, 0.60, 1.0, 0.0, false, ""});
    rows.push_back({"ips", 0, 2, 0.64, 2.0, 0.0, false, ""});
    const auto aggs = aggregate_rows(rows);
    REQUIRE(aggs.size() == 1);
    REQUIRE(aggs[0].mean_reward_mean == Catch::Approx(0.62).margin(1e-12));
    REQUIRE(aggs[0].mean_reward_std == Catch::Approx(0.02).margin(1e-12));
    REQUIRE(aggs[0].regret_mean == Catch::Approx(1.5).margin(1e-12));

    // one row aggregates to itself with zero spread
    const auto single = aggregate_rows({rows[0]});
    REQUIRE(single[0].mean_reward_mean == 0.60);
    REQUIRE(single[0].mean_reward_std == 0.0);
}

TEST_CASE("failed seeds are excluded from aggregates and flagged") {
    std::vector<ReportRow> rows;
    rows.push_back({"k-cd", 2, 1, 0.5, 1.0, 0.0, false, ""});
    rows.push_back({"k-cd", 2, 2, 0.0, 0.0, 0.0, true, "boom"});
    const auto aggs = aggregate_rows(rows);
    REQUIRE(aggs[0].seeds == 1);
    REQUIRE(aggs[0].failed_seeds == 1);
    REQUIRE(aggs[0].mean_reward_mean == 0.5);
}

TEST_CASE("csv column orders are pinned") {
    REQUIRE(aggregate_csv({}) ==
            "method,k,seeds,failed_seeds,mean_reward_mean,mean_reward_std,regret_mean,regret_std\n");
    REQUIRE(ksweep_csv({}) == "method,k,mean_reward_mean,mean_reward_std\n");
}

TEST_CASE("experiment config round-trips through json") {
    ExperimentConfig cfg = small_config();
    cfg.latent_shift = 400;
    cfg.train.temperature = 0.05;
    const ExperimentConfig back = experiment_config_from_json(to_json(cfg));
    REQUIRE(back.env.horizon == cfg.env.horizon);
    REQUIRE(back.seeds == cfg.seeds);
    REQUIRE(back.k_values == cfg.k_values);
    REQUIRE(back.train.temperature == cfg.train.temperature);
    REQUIRE(back.latent_shift == 400);
    REQUIRE(back.detector_window == cfg.detector_window);
}

TEST_CASE("a stage failure is recorded per seed instead of aborting the run") {
    ExperimentConfig cfg = small_config();
    cfg.methods = {"ips", "k-cd"};
    cfg.seeds = {1};
    cfg.detector_window = 2000;  // horizon 1500 <= 2w: the detector must reject this
    const ExperimentReport report = run_experiment(cfg);
    REQUIRE_FALSE(report.all_succeeded);
    int failed = 0;
    for (const auto& row : report.rows) {
        if (row.method == "k-cd") {
            REQUIRE(row.failed);
            REQUIRE(!row.error.empty());
            ++failed;
        } else {
            REQUIRE_FALSE(row.failed);
        }
    }
    REQUIRE(failed == 1);
}

TEST_CASE("a cycle schedule revisits states so several segments share one state") {
    ExperimentConfig cfg = small_config();
    cfg.env.schedule = ScheduleKind::CycleUp;
    cfg.env.num_states = 3;
    cfg.env.horizon = 1800;
    cfg.env.change_period = 300;  // 6 segments over 3 states
    cfg.methods = {"k-hmm"};
    cfg.k_values = {3};
    cfg.seeds = {2};
    const ExperimentReport report = run_experiment(cfg);
    REQUIRE(report.all_succeeded);

    SplitRng root(2);
    SplitRng env_rng = root.child(hash_key("env"));
    const EnvSpec env = generate_synthetic_env(cfg.env, env_rng);
    REQUIRE(env.schedule.num_segments() == 6);
    REQUIRE(env.schedule.num_states() == 3);
}

TEST_CASE("latent shift deploys on a rotated sequence without failures") {
    ExperimentConfig cfg = small_config();
    cfg.methods = {"k-cd"};
    cfg.seeds = {4};
    cfg.latent_shift = 500;
    const ExperimentReport report = run_experiment(cfg);
    REQUIRE(report.all_succeeded);
    REQUIRE(report.rows.size() == 1);
}
