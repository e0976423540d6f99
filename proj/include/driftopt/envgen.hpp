#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "driftopt/core.hpp"
#include "driftopt/rng.hpp"

namespace driftopt {

enum class ScheduleKind {
    TriangleRamp,  // 1,2,...,L,L-1,...,1,2,... changing every period rounds
    CycleUp,       // 1,2,...,L,1,2,... (S > L with abrupt wrap)
};

struct SyntheticEnvConfig {
    int num_actions = 5;             // K
    int num_states = 5;              // L
    std::int64_t horizon = 100000;   // T
    double noise_sigma = 0.5;        // reward noise
    std::int64_t change_period = 10000;
    ScheduleKind schedule = ScheduleKind::TriangleRamp;
    double logging_noise = 0.1;      // std of the per-action perturbation of pi_0
};

// Ground truth for the synthetic piecewise-stationary bandit: mean-reward
// table mu(a, z), a fixed latent schedule, and the stationary logging policy.
// The synthetic task is context-free; every round uses tabular context 0.
struct EnvSpec {
    int num_actions;
    int num_states;
    double noise_sigma;
    std::vector<double> mean_reward;  // K x L row-major: mean_reward[a * L + z]
    LatentSequence schedule;
    SoftmaxPolicy logging_policy;

    double mu(int a, int z) const { return mean_reward[static_cast<std::size_t>(a) * num_states + z]; }
    std::int64_t horizon() const { return schedule.size(); }
    Context context_at(std::int64_t) const { return Context::tabular(0); }

    double max_mu() const { return *std::max_element(mean_reward.begin(), mean_reward.end()); }
    double min_mu() const { return *std::min_element(mean_reward.begin(), mean_reward.end()); }
};

inline LatentSequence make_schedule(std::int64_t horizon, int num_states, std::int64_t period,
                                    ScheduleKind kind) {
    if (horizon < 1) throw InputError("make_schedule: horizon must be positive");
    if (period < 1) throw InputError("make_schedule: period must be positive");
    std::vector<int> labels(horizon);
    const int L = num_states;
    for (std::int64_t t = 0; t < horizon; ++t) {
        const std::int64_t block = t / period;
        int z;
        if (L == 1) {
            z = 0;
        } else if (kind == ScheduleKind::TriangleRamp) {
            const std::int64_t m = block % (2 * L - 2);
            z = m < L ? static_cast<int>(m) : static_cast<int>(2 * L - 2 - m);
        } else {
            z = static_cast<int>(block % L);
        }
        labels[t] = z;
    }
    return LatentSequence(std::move(labels), num_states);
}

// Build the synthetic environment: mu(a, z) ~ Uniform(0, 1), and the logging
// policy pi_0(a) proportional to exp(mean_z mu(a, z) + eps_a) with
// eps_a ~ N(0, logging_noise^2) drawn once per action.
inline EnvSpec generate_synthetic_env(const SyntheticEnvConfig& cfg, SplitRng& rng) {
    if (cfg.num_actions < 2) throw ConfigError("generate_synthetic_env: need at least 2 actions");
    if (cfg.num_states < 1) throw ConfigError("generate_synthetic_env: need at least 1 state");
    if (!(cfg.noise_sigma >= 0.0)) throw ConfigError("generate_synthetic_env: noise_sigma must be >= 0");

    const int K = cfg.num_actions;
    const int L = cfg.num_states;
    std::vector<double> mu(static_cast<std::size_t>(K) * L);
    for (double& v : mu) v = rng.uniform01();

    std::vector<double> theta(K);
    for (int a = 0; a < K; ++a) {
        double row_mean = 0.0;
        for (int z = 0; z < L; ++z) row_mean += mu[static_cast<std::size_t>(a) * L + z];
        row_mean /= L;
        theta[a] = row_mean + rng.normal(0.0, cfg.logging_noise);
    }

    const FeatureMap map = FeatureMap::tabular(1, K);
    return EnvSpec{K,
                   L,
                   cfg.noise_sigma,
                   std::move(mu),
                   make_schedule(cfg.horizon, L, cfg.change_period, cfg.schedule),
                   SoftmaxPolicy(map, std::move(theta))};
}

// One pass of the logging policy over the schedule: a_t ~ pi_0, the reward is
// N(mu(a_t, z_t), sigma^2), and the propensity is pi_0's probability of a_t.
inline LoggedData simulate_log(const EnvSpec& env, SplitRng& rng) {
    const std::int64_t T = env.horizon();
    LoggedData data;
    data.reserve(T);
    const Context x = env.context_at(0);
    const std::vector<double> pi0 = env.logging_policy.action_distribution(x);
    for (std::int64_t t = 0; t < T; ++t) {
        const int z = env.schedule[t];
        const int a = rng.categorical(pi0);
        const double r = rng.normal(env.mu(a, z), env.noise_sigma);
        data.push_back(LoggedInteraction{t, x, a, r, pi0[a]});
    }
    return data;
}

// Per-round expected reward of `policy` under latent state z.
inline double state_value(const EnvSpec& env, const SoftmaxPolicy& policy, int z) {
    if (z < 0 || z >= env.num_states) throw InputError("state_value: state out of range");
    const std::vector<double> dist = policy.action_distribution(env.context_at(0));
    double v = 0.0;
    for (int a = 0; a < env.num_actions; ++a) v += dist[a] * env.mu(a, z);
    return v;
}

// Exact value of a single stationary policy over the whole schedule.
inline double true_value(const EnvSpec& env, const SoftmaxPolicy& policy) {
    std::vector<double> per_state(env.num_states);
    for (int z = 0; z < env.num_states; ++z) per_state[z] = state_value(env, policy, z);
    double v = 0.0;
    for (std::int64_t t = 0; t < env.horizon(); ++t) v += per_state[env.schedule[t]];
    return v;
}

// Exact value of a per-state policy set deployed along `assignment`:
// sum_t sum_a pi_{z_t}(a | x_t) mu(a, z_t), no sampling.
inline double true_value(const EnvSpec& env, std::span<const SoftmaxPolicy> policy_set,
                         const LatentSequence& assignment) {
    if (assignment.size() != env.horizon())
        throw ConfigError("true_value: assignment length does not match the horizon");
    const int L = env.num_states;
    const int P = static_cast<int>(policy_set.size());
    std::vector<double> per_state(static_cast<std::size_t>(P) * L);
    std::vector<bool> have(P, false);
    double v = 0.0;
    for (std::int64_t t = 0; t < env.horizon(); ++t) {
        const int i = assignment[t];
        if (i >= P) throw ConfigError("true_value: no sub-policy for a label in the assignment");
        if (!have[i]) {
            for (int z = 0; z < L; ++z) per_state[static_cast<std::size_t>(i) * L + z] = state_value(env, policy_set[i], z);
            have[i] = true;
        }
        v += per_state[static_cast<std::size_t>(i) * L + env.schedule[t]];
    }
    return v;
}

// Exact per-round value of the best deterministic per-state policy.
inline double optimal_value(const EnvSpec& env) {
    std::vector<double> best(env.num_states, -std::numeric_limits<double>::infinity());
    for (int z = 0; z < env.num_states; ++z)
        for (int a = 0; a < env.num_actions; ++a) best[z] = std::max(best[z], env.mu(a, z));
    double v = 0.0;
    for (std::int64_t t = 0; t < env.horizon(); ++t) v += best[env.schedule[t]];
    return v;
}

// Exact per-round / per-state values for a set of policies against one env.
struct ValueTable {
    std::vector<std::vector<double>> per_state;  // per_state[i][z]
    LatentSequence schedule;

    double per_round(int policy, std::int64_t t) const { return per_state[policy][schedule[t]]; }
};

inline ValueTable make_value_table(const EnvSpec& env, std::span<const SoftmaxPolicy> policies) {
    ValueTable table{{}, env.schedule};
    table.per_state.reserve(policies.size());
    for (const auto& p : policies) {
        std::vector<double> row(env.num_states);
        for (int z = 0; z < env.num_states; ++z) row[z] = state_value(env, p, z);
        table.per_state.push_back(std::move(row));
    }
    return table;
}

}  // namespace driftopt
