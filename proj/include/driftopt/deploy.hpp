#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftopt/core.hpp"
#include "driftopt/envgen.hpp"
#include "driftopt/hmm.hpp"
#include "driftopt/learner.hpp"
#include "driftopt/rng.hpp"

namespace driftopt {

struct Exp4sConfig {
    double learning_rate = 0.1;  // eta
    double mixing = 0.2;         // beta, fixed-share mass
    double exploration = 0.0;    // gamma
};

// eta = sqrt(log L / (l K)) with l = T/S, gamma = 0. The fixed-share rate is
// beta = 1/l = S/T: mixing once per expected segment keeps the uniform pull
// below the cost signal, so the weights can actually track the active expert.
inline Exp4sConfig exp4s_hyperparams(std::int64_t horizon, int num_segments, int num_actions,
                                     int num_experts) {
    if (horizon < 1 || num_segments < 1 || num_actions < 1 || num_experts < 1)
        throw InputError("exp4s_hyperparams: arguments must be positive");
    const double ell = static_cast<double>(horizon) / static_cast<double>(num_segments);
    const double eta = std::sqrt(std::log(static_cast<double>(num_experts)) /
                                 (ell * static_cast<double>(num_actions)));
    return Exp4sConfig{std::max(eta, 1e-6), std::min(1.0, 1.0 / ell), 0.0};
}

// Exp4.S over stochastic experts: exponential-weights update on propagated
// costs with fixed-share mixing toward uniform. Costs assume rewards in
// [0, 1]; rewards outside that range are clamped for the update only.
class Exp4s {
  public:
    Exp4s(int num_experts, Exp4sConfig config) : config_(config) {
        if (num_experts < 1) throw ConfigError("Exp4s: need at least one expert");
        if (!(config.learning_rate > 0.0)) throw ConfigError("Exp4s: eta must be positive");
        if (config.mixing < 0.0 || config.mixing > 1.0) throw ConfigError("Exp4s: beta must be in [0, 1]");
        if (config.exploration < 0.0 || config.exploration > 1.0)
            throw ConfigError("Exp4s: gamma must be in [0, 1]");
        weights_.assign(num_experts, 1.0 / num_experts);
    }

    const std::vector<double>& weights() const { return weights_; }
    const Exp4sConfig& config() const { return config_; }
    int clamp_count() const { return clamp_count_; }

    // E_t(a) = (1 - gamma) sum_z w_t(z) pi_z(a | x) + gamma / L.
    std::vector<double> mixture(const Context& x, const PolicyBundle& bundle) const {
        check_bundle(bundle);
        const int K = bundle.sub_policies.front().num_actions();
        std::vector<double> mix(K, 0.0);
        std::vector<double> dist(K);
        for (std::size_t z = 0; z < weights_.size(); ++z) {
            bundle.sub_policies[z].action_distribution(x, dist);
            for (int a = 0; a < K; ++a) mix[a] += weights_[z] * dist[a];
        }
        const double gamma = config_.exploration;
        for (int a = 0; a < K; ++a)
            mix[a] = (1.0 - gamma) * mix[a] + gamma / static_cast<double>(weights_.size());
        return mix;
    }

    int choose(const Context& x, const PolicyBundle& bundle, SplitRng& rng) const {
        return rng.categorical(mixture(x, bundle));
    }

    void update(const Context& x, const PolicyBundle& bundle, int action, double reward) {
        const std::vector<double> mix = mixture(x, bundle);
        if (action < 0 || action >= static_cast<int>(mix.size()))
            throw InputError("Exp4s::update: action out of range");
        if (!(mix[action] > 0.0))
            throw InputError("Exp4s::update: action has zero mixture probability");
        double r = reward;
        if (r < 0.0 || r > 1.0) {
            r = std::clamp(r, 0.0, 1.0);
            ++clamp_count_;
        }
        const double cost = (1.0 - r) / mix[action];  // chat_t(a_t)
        const int L = static_cast<int>(weights_.size());
        std::vector<double> propagated(L);
        for (int z = 0; z < L; ++z)
            propagated[z] = cost * bundle.sub_policies[z].prob(x, action);  // ctilde_t(z)
        // exponential-weights step (max-shifted so the normalizer cannot
        // underflow), then fixed-share mixing
        const double least = *std::min_element(propagated.begin(), propagated.end());
        double total = 0.0;
        for (int z = 0; z < L; ++z) {
            weights_[z] *= std::exp(-config_.learning_rate * (propagated[z] - least));
            total += weights_[z];
        }
        for (int z = 0; z < L; ++z)
            weights_[z] = (1.0 - config_.mixing) * weights_[z] / total +
                          config_.mixing / static_cast<double>(L);
    }

  private:
    void check_bundle(const PolicyBundle& bundle) const {
        if (bundle.sub_policies.size() != weights_.size())
            throw ConfigError("Exp4s: bundle size does not match the expert count");
    }

    std::vector<double> weights_;
    Exp4sConfig config_;
    int clamp_count_ = 0;
};

// Acts from the mixture weighted by the filtered HMM posterior
// Q_t(z) = P(z_t = z | history); the reward likelihood updates the filter.
class PosteriorSampler {
  public:
    explicit PosteriorSampler(HmmParams hmm) : hmm_(std::move(hmm)), posterior_(hmm_.p0) {
        hmm_.validate();
    }

    const std::vector<double>& posterior() const { return posterior_; }
    const HmmParams& hmm() const { return hmm_; }

    std::vector<double> mixture(const Context& x, const PolicyBundle& bundle) const {
        if (bundle.num_states() != hmm_.num_states())
            throw ConfigError("PosteriorSampler: bundle size does not match the HMM");
        const int K = bundle.sub_policies.front().num_actions();
        std::vector<double> mix(K, 0.0);
        std::vector<double> dist(K);
        for (int z = 0; z < hmm_.num_states(); ++z) {
            bundle.sub_policies[z].action_distribution(x, dist);
            for (int a = 0; a < K; ++a) mix[a] += posterior_[z] * dist[a];
        }
        return mix;
    }

    int choose(const Context& x, const PolicyBundle& bundle, SplitRng& rng) const {
        return rng.categorical(mixture(x, bundle));
    }

    // Q_{t+1}(z) proportional to sum_z' Q_t(z') P(r | x, a, z') Phi(z', z),
    // with the likelihoods max-shifted so the mass never underflows.
    void update(const Context& x, int action, double reward) {
        const int L = hmm_.num_states();
        std::vector<double> loglik(L);
        double m = -std::numeric_limits<double>::infinity();
        for (int z = 0; z < L; ++z) {
            loglik[z] = emission_log_density(hmm_, x, action, reward, z);
            m = std::max(m, loglik[z]);
        }
        std::vector<double> weighted(L);
        double mass_check = 0.0;
        for (int z = 0; z < L; ++z) {
            weighted[z] = posterior_[z] * std::exp(loglik[z] - m);
            mass_check += weighted[z];
        }
        if (!(mass_check > 0.0)) throw DataError("PosteriorSampler: posterior mass vanished");
        std::vector<double> next(L, 0.0);
        for (int zp = 0; zp < L; ++zp)
            for (int z = 0; z < L; ++z) next[z] += weighted[zp] * hmm_.phi(zp, z);
        double total = 0.0;
        for (double v : next) total += v;
        for (int z = 0; z < L; ++z) posterior_[z] = next[z] / total;
    }

  private:
    HmmParams hmm_;
    std::vector<double> posterior_;
};

enum class SwitcherKind { Exp4s, Posterior, Oracle };

struct DeployOptions {
    SwitcherKind switcher = SwitcherKind::Exp4s;
    std::int64_t horizon = 0;  // 0 = environment schedule length
    std::optional<Exp4sConfig> exp4s;          // default: exp4s_hyperparams of the env schedule
    const HmmParams* hmm = nullptr;            // required for the posterior switcher
    const LatentSequence* latent_override = nullptr;  // deploy on a different latent sequence
    bool record_rows = true;
};

struct TraceRow {
    std::int64_t t;
    Context context;
    int action;
    double reward;
    double expected_reward;             // analytic, from the environment table
    std::vector<double> mixture_state;  // expert weights / posterior / one-hot oracle state
};

struct DeploymentTrace {
    std::vector<TraceRow> rows;
    std::int64_t horizon = 0;
    double mean_reward = 0.0;    // mean analytic expected reward per round
    double mean_realized = 0.0;  // mean sampled reward per round
    double regret = 0.0;         // vs the per-state optimal action sequence
    int clamp_warnings = 0;
    bool schedule_cycled = false;
};

// The online loop: per round, the switcher produces an action mixture over
// the experts, an action is sampled, the environment returns a reward, and
// the switcher state is updated. Expected reward and regret are computed
// analytically from the environment's mean-reward table.
inline DeploymentTrace run_deployment(const EnvSpec& env, const PolicyBundle& bundle,
                                      const DeployOptions& options, SplitRng& rng) {
    const LatentSequence& seq = options.latent_override ? *options.latent_override : env.schedule;
    if (options.latent_override && options.latent_override->num_states() > env.num_states)
        throw ConfigError("run_deployment: latent override uses unknown states");
    const std::int64_t horizon = options.horizon > 0 ? options.horizon : seq.size();
    const int L = bundle.num_states();
    if (L < 1) throw ConfigError("run_deployment: empty policy bundle");
    if (bundle.sub_policies.front().num_actions() != env.num_actions)
        throw ConfigError("run_deployment: bundle action count does not match the environment");

    std::optional<Exp4s> exp4s;
    std::optional<PosteriorSampler> sampler;
    switch (options.switcher) {
        case SwitcherKind::Exp4s: {
            const Exp4sConfig cfg = options.exp4s.value_or(
                exp4s_hyperparams(horizon, seq.num_segments(), env.num_actions, L));
            exp4s.emplace(L, cfg);
            break;
        }
        case SwitcherKind::Posterior: {
            if (!options.hmm) throw ConfigError("run_deployment: posterior switcher needs HMM parameters");
            if (options.hmm->num_states() != L)
                throw ConfigError("run_deployment: HMM state count does not match the bundle");
            sampler.emplace(*options.hmm);
            break;
        }
        case SwitcherKind::Oracle:
            if (seq.num_states() > L)
                throw ConfigError("run_deployment: oracle switcher needs a sub-policy per state");
            break;
    }

    std::vector<double> best_mu(env.num_states, -std::numeric_limits<double>::infinity());
    for (int z = 0; z < env.num_states; ++z)
        for (int a = 0; a < env.num_actions; ++a) best_mu[z] = std::max(best_mu[z], env.mu(a, z));

    DeploymentTrace trace;
    trace.horizon = horizon;
    trace.schedule_cycled = horizon > seq.size();
    if (options.record_rows) trace.rows.reserve(horizon);

    double expected_sum = 0.0, realized_sum = 0.0, regret_sum = 0.0;
    for (std::int64_t t = 0; t < horizon; ++t) {
        const int z = seq[t % seq.size()];
        const Context x = env.context_at(t);

        std::vector<double> mix;
        std::vector<double> state_snapshot;
        if (exp4s) {
            mix = exp4s->mixture(x, bundle);
            state_snapshot = exp4s->weights();
        } else if (sampler) {
            mix = sampler->mixture(x, bundle);
            state_snapshot = sampler->posterior();
        } else {
            mix = bundle.policy_for(z).action_distribution(x);
            state_snapshot.assign(L, 0.0);
            state_snapshot[z] = 1.0;
        }

        double mass = 0.0;
        for (double v : mix) mass += v;
        double expected = 0.0;
        for (int a = 0; a < env.num_actions; ++a) expected += (mix[a] / mass) * env.mu(a, z);

        const int action = rng.categorical(mix);
        const double reward = rng.normal(env.mu(action, z), env.noise_sigma);

        if (exp4s) exp4s->update(x, bundle, action, reward);
        if (sampler) sampler->update(x, action, reward);

        expected_sum += expected;
        realized_sum += reward;
        regret_sum += best_mu[z] - expected;
        if (options.record_rows)
            trace.rows.push_back(TraceRow{t, x, action, reward, expected, std::move(state_snapshot)});
    }

    trace.mean_reward = expected_sum / static_cast<double>(horizon);
    trace.mean_realized = realized_sum / static_cast<double>(horizon);
    trace.regret = regret_sum;
    trace.clamp_warnings = exp4s ? exp4s->clamp_count() : 0;
    return trace;
}

// Sub-policies that put all probability on the per-state best action. The
// weight gap is large enough that the softmax is exactly one-hot in floating
// point, which makes the oracle-deployment regret identically zero.
inline PolicyBundle optimal_bundle(const EnvSpec& env) {
    const FeatureMap map = FeatureMap::tabular(1, env.num_actions);
    PolicyBundle bundle;
    for (int z = 0; z < env.num_states; ++z) {
        int best = 0;
        for (int a = 1; a < env.num_actions; ++a)
            if (env.mu(a, z) > env.mu(best, z)) best = a;
        std::vector<double> theta(map.dim(), 0.0);
        theta[best] = 1000.0;
        bundle.sub_policies.emplace_back(map, std::move(theta));
    }
    bundle.objective_curves.assign(env.num_states, {});
    return bundle;
}

}  // namespace driftopt
